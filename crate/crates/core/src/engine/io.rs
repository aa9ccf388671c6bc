//! Hooks between a running episode and the outside world: teleoperation
//! intake and per-tick state publication.

use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlInput, VesselState};
use crate::planner::AgentId;
use crate::world::Point;

use super::scenario::{ControllerKind, MapSource, Mode};

/// Normalized joystick command for one teleoperated vessel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TeleopCommand {
    pub agent_id: AgentId,
    /// Forward thrust in `[-1, 1]`.
    pub surge: f64,
    /// Turning thrust in `[-1, 1]`, positive to port.
    pub yaw: f64,
    /// Sender clock, milliseconds. Informational only.
    #[serde(default)]
    pub client_time_ms: f64,
}

impl TeleopCommand {
    /// Copy with both axes clamped into `[-1, 1]` (non-finite values become 0).
    pub fn clamped(self) -> Self {
        let c = |x: f64| if x.is_finite() { x.clamp(-1.0, 1.0) } else { 0.0 };
        Self {
            surge: c(self.surge),
            yaw: c(self.yaw),
            ..self
        }
    }

    /// Longitudinal pair gets `surge * f_max / 2` each, the lateral pair
    /// `+-yaw * f_max / 2`.
    pub fn to_thrust(&self, f_max: f64) -> ControlInput {
        let c = self.clamped();
        let (s, y) = (0.5 * c.surge * f_max, 0.5 * c.yaw * f_max);
        ControlInput::new(s, s, y, -y)
    }
}

/// Read side of the teleop latches. Polled once per control tick.
pub trait TeleopSource: Send + Sync {
    fn latest(&self, agent: AgentId) -> Option<TeleopCommand>;
}

/// Static episode description sent before the first frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeInfo {
    pub map: MapSource,
    pub map_hash: String,
    pub mode: Mode,
    pub seed: u64,
    pub control_period_s: f64,
    pub agents: Vec<AgentInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentInfo {
    pub id: AgentId,
    pub controller: ControllerKind,
    pub length_m: f64,
    pub width_m: f64,
    pub goal: Point,
}

/// Per-agent content of one published tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSnapshot {
    pub id: AgentId,
    pub controller: ControllerKind,
    pub state: VesselState,
    pub input: ControlInput,
    pub local_goal: Point,
    /// Planned positions over the horizon, empty for non-planning vessels.
    pub planned: Vec<Point>,
}

/// Immutable view of the world after one control tick was decided.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickSnapshot {
    pub tick: u64,
    pub time_s: f64,
    pub agents: Vec<AgentSnapshot>,
    /// Unordered pairs currently violating a regulation predicate.
    pub violations: Vec<[AgentId; 2]>,
    pub collision: bool,
}

/// Receives episode state as it is produced. Implementations must not block.
pub trait FrameSink: Send + Sync {
    fn begin(&self, _info: &EpisodeInfo) {}
    fn publish(&self, snapshot: &TickSnapshot);
    fn end(&self) {}
}
