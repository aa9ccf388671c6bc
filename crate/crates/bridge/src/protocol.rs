//! Wire format. Every message is one WebSocket text frame holding a JSON
//! object with a `type` field.

use serde::{Deserialize, Serialize};

use canal_core::engine::{ControllerKind, EpisodeInfo, MapSource, TeleopCommand, TickSnapshot};
use canal_core::{AgentId, OccupancyGrid};

/// Bumped on any incompatible change to the messages below.
pub const SCHEMA_VERSION: u32 = 1;

/// Occupancy raster as alternating run lengths, row-major from cell (0, 0),
/// starting with a run of free cells (possibly empty).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapRaster {
    pub width: usize,
    pub height: usize,
    pub resolution_m: f64,
    pub origin: [f64; 2],
    pub runs: Vec<usize>,
}

impl MapRaster {
    pub fn from_grid(grid: &OccupancyGrid) -> Self {
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0;
        for &c in grid.cells() {
            if c == current {
                len += 1;
            } else {
                runs.push(len);
                current = c;
                len = 1;
            }
        }
        runs.push(len);
        Self {
            width: grid.width(),
            height: grid.height(),
            resolution_m: grid.resolution(),
            origin: [grid.origin().x, grid.origin().y],
            runs,
        }
    }

    /// Expands the runs back into one flag per cell.
    pub fn cells(&self) -> Vec<bool> {
        let mut out = Vec::with_capacity(self.width * self.height);
        for (k, n) in self.runs.iter().enumerate() {
            out.extend(std::iter::repeat_n(k % 2 == 1, *n));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameAgent {
    pub id: AgentId,
    pub controller: ControllerKind,
    pub x_m: f64,
    pub y_m: f64,
    pub heading_rad: f64,
    pub surge_mps: f64,
    pub sway_mps: f64,
    pub yaw_rate_radps: f64,
    /// Thruster forces applied over this tick, newtons.
    pub input_n: [f64; 4],
    pub local_goal: [f64; 2],
    /// Planned positions, empty for vessels that do not plan.
    pub planned: Vec<[f64; 2]>,
}

/// One simulation tick as seen by a viewer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub schema_version: u32,
    pub tick: u64,
    pub time_s: f64,
    pub map: MapSource,
    pub map_hash: String,
    pub agents: Vec<FrameAgent>,
    pub violations: Vec<[AgentId; 2]>,
    pub collision: bool,
}

impl Frame {
    pub fn from_snapshot(s: &TickSnapshot, map: &MapSource, map_hash: &str) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            tick: s.tick,
            time_s: s.time_s,
            map: map.clone(),
            map_hash: map_hash.to_string(),
            agents: s
                .agents
                .iter()
                .map(|a| FrameAgent {
                    id: a.id,
                    controller: a.controller,
                    x_m: a.state.x,
                    y_m: a.state.y,
                    heading_rad: a.state.heading,
                    surge_mps: a.state.surge,
                    sway_mps: a.state.sway,
                    yaw_rate_radps: a.state.yaw_rate,
                    input_n: a.input.0,
                    local_goal: [a.local_goal.x, a.local_goal.y],
                    planned: a.planned.iter().map(|p| [p.x, p.y]).collect(),
                })
                .collect(),
            violations: s.violations.clone(),
            collision: s.collision,
        }
    }
}

/// Messages sent by clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Hello { schema_version: u32, client: String },
    Teleop(TeleopCommand),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    SchemaMismatch,
    HandshakeRequired,
    Malformed,
    UnknownAgent,
    NotTeleop,
}

/// Messages sent by the server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Welcome {
        schema_version: u32,
        /// Current episode, if one is running.
        episode: Option<EpisodeInfo>,
        map_raster: Option<MapRaster>,
    },
    Episode {
        episode: EpisodeInfo,
        map_raster: Option<MapRaster>,
    },
    Frame(Frame),
    TeleopAck {
        agent_id: AgentId,
        surge: f64,
        yaw: f64,
    },
    EpisodeEnd,
    Error {
        code: ErrorCode,
        message: String,
    },
}

impl ServerMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages serialize")
    }
}

impl ClientMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("client messages serialize")
    }
}
