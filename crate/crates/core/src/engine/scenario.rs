//! Scenario description, validation and seeded randomization.

use std::fmt;
use std::path::PathBuf;

use nalgebra::Vector2;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::costs::CostParams;
use crate::dynamics::{wrap_angle, VesselParams};
use crate::goals::GoalParams;
use crate::planner::{stream_rng, AgentId, PlannerParams};
use crate::world::{footprint_collides, footprints_overlap, load_map, Footprint, MapError, OccupancyGrid, Point};

use super::EngineError;

/// Where the occupancy grid comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MapSource {
    /// Binary PGM raster plus a TOML sidecar with resolution and origin.
    Pgm { image: PathBuf, meta: PathBuf },
    /// Straight canal along +x: water on `[0, length] x [0, width]`, one
    /// meter of bank on each side.
    StraightCanal {
        length_m: f64,
        width_m: f64,
        #[serde(default = "default_resolution")]
        resolution_m: f64,
    },
    /// Two perpendicular canals crossing at the origin, each arm
    /// `arm_length_m` long.
    Crossing {
        arm_length_m: f64,
        width_m: f64,
        #[serde(default = "default_resolution")]
        resolution_m: f64,
    },
    /// Obstacle-free rectangle `[0, width] x [0, height]`.
    OpenWater {
        width_m: f64,
        height_m: f64,
        #[serde(default = "default_resolution")]
        resolution_m: f64,
    },
}

fn default_resolution() -> f64 {
    0.1
}

fn cells(extent: f64, resolution: f64) -> Result<usize, MapError> {
    if !(extent > 0.0 && resolution > 0.0) {
        return Err(MapError::Geometry(format!(
            "extent {extent} m and resolution {resolution} m must be positive"
        )));
    }
    Ok((extent / resolution).round().max(1.0) as usize)
}

impl MapSource {
    pub fn build(&self) -> Result<OccupancyGrid, MapError> {
        match self {
            MapSource::Pgm { image, meta } => load_map(image, meta),
            MapSource::StraightCanal {
                length_m,
                width_m,
                resolution_m,
            } => {
                let (l, w) = (*length_m, *width_m);
                OccupancyGrid::from_fn(
                    cells(l, *resolution_m)?,
                    cells(w + 2.0, *resolution_m)?,
                    *resolution_m,
                    Vector2::new(0.0, -1.0),
                    |p| p.y < 0.0 || p.y > w,
                )
            }
            MapSource::Crossing {
                arm_length_m,
                width_m,
                resolution_m,
            } => {
                let (a, hw) = (*arm_length_m, 0.5 * width_m);
                let n = cells(2.0 * a, *resolution_m)?;
                OccupancyGrid::from_fn(n, n, *resolution_m, Vector2::new(-a, -a), |p| {
                    p.x.abs() > hw && p.y.abs() > hw
                })
            }
            MapSource::OpenWater {
                width_m,
                height_m,
                resolution_m,
            } => OccupancyGrid::empty(
                cells(*width_m, *resolution_m)?,
                cells(*height_m, *resolution_m)?,
                *resolution_m,
                Vector2::zeros(),
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScriptedPolicy {
    /// Holds the start heading at a fixed speed.
    ConstantVelocity,
    /// Station-keeps at the start pose.
    HoldPosition,
    /// Follows its path but dodges oncoming vessels to port.
    WrongSideAvoider,
}

impl ScriptedPolicy {
    pub fn name(&self) -> &'static str {
        match self {
            ScriptedPolicy::ConstantVelocity => "constant_velocity",
            ScriptedPolicy::HoldPosition => "hold_position",
            ScriptedPolicy::WrongSideAvoider => "wrong_side_avoider",
        }
    }
}

/// How an agent's inputs are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ControllerKind {
    #[default]
    Mppi,
    Scripted(ScriptedPolicy),
    Teleop,
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ControllerKind::Mppi => write!(f, "mppi"),
            ControllerKind::Teleop => write!(f, "teleop"),
            ControllerKind::Scripted(p) => write!(f, "scripted:{}", p.name()),
        }
    }
}

impl TryFrom<String> for ControllerKind {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        Ok(match s.as_str() {
            "mppi" => ControllerKind::Mppi,
            "teleop" => ControllerKind::Teleop,
            "scripted:constant_velocity" => ControllerKind::Scripted(ScriptedPolicy::ConstantVelocity),
            "scripted:hold_position" => ControllerKind::Scripted(ScriptedPolicy::HoldPosition),
            "scripted:wrong_side_avoider" => ControllerKind::Scripted(ScriptedPolicy::WrongSideAvoider),
            other => {
                return Err(format!(
                    "unknown controller `{other}`; expected mppi, teleop, scripted:constant_velocity, \
                     scripted:hold_position or scripted:wrong_side_avoider"
                ))
            }
        })
    }
}

impl From<ControllerKind> for String {
    fn from(c: ControllerKind) -> String {
        c.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// One planner over every agent.
    Centralized,
    /// One planner per agent, others' true local goals shared.
    DecComm,
    /// One planner per agent, others' goals predicted.
    #[default]
    DecNocomm,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Centralized, Mode::DecComm, Mode::DecNocomm];

    pub fn name(&self) -> &'static str {
        match self {
            Mode::Centralized => "centralized",
            Mode::DecComm => "dec_comm",
            Mode::DecNocomm => "dec_nocomm",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown mode `{s}`; expected centralized, dec_comm or dec_nocomm"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pose {
    pub x_m: f64,
    pub y_m: f64,
    #[serde(default)]
    pub heading_rad: f64,
}

impl Pose {
    pub fn position(&self) -> Point {
        Vector2::new(self.x_m, self.y_m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoalPoint {
    pub x_m: f64,
    pub y_m: f64,
}

impl GoalPoint {
    pub fn position(&self) -> Point {
        Vector2::new(self.x_m, self.y_m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub id: AgentId,
    #[serde(default)]
    pub controller: ControllerKind,
    pub start: Pose,
    /// Omitted: the start position (station keeping).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal: Option<GoalPoint>,
    /// Cruise speed of scripted policies.
    #[serde(default = "default_script_speed")]
    pub script_speed_mps: f64,
    /// Excluded from scenario randomization when false.
    #[serde(default = "default_true")]
    pub randomize: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vessel: Option<VesselParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub costs: Option<CostParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planner: Option<PlannerParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goals: Option<GoalParams>,
}

fn default_script_speed() -> f64 {
    1.2
}

fn default_true() -> bool {
    true
}

impl AgentSpec {
    pub fn new(id: AgentId, controller: ControllerKind, start: Pose, goal: Option<Point>) -> Self {
        Self {
            id,
            controller,
            start,
            goal: goal.map(|g| GoalPoint { x_m: g.x, y_m: g.y }),
            script_speed_mps: default_script_speed(),
            randomize: true,
            vessel: None,
            costs: None,
            planner: None,
            goals: None,
        }
    }

    pub fn goal_position(&self) -> Point {
        self.goal.map(|g| g.position()).unwrap_or_else(|| self.start.position())
    }
}

/// Uniform jitter applied by [`randomize_scenario`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Randomization {
    pub start_radius_m: f64,
    pub goal_radius_m: f64,
    pub heading_jitter_rad: f64,
}

impl Randomization {
    pub fn is_zero(&self) -> bool {
        self.start_radius_m == 0.0 && self.goal_radius_m == 0.0 && self.heading_jitter_rad == 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub map: MapSource,
    pub agents: Vec<AgentSpec>,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default = "d_period")]
    pub control_period_s: f64,
    #[serde(default = "d_substep")]
    pub sim_substep_s: f64,
    #[serde(default = "d_max_time")]
    pub max_time_s: f64,
    #[serde(default = "d_goal_tol")]
    pub goal_tolerance_m: f64,
    #[serde(default = "d_deadlock_speed")]
    pub deadlock_speed_mps: f64,
    #[serde(default = "d_deadlock_window")]
    pub deadlock_window_s: f64,
    /// Clearance kept by the global path from static obstacles.
    #[serde(default = "d_path_clearance")]
    pub path_clearance_m: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub randomization: Randomization,
    #[serde(default)]
    pub vessel: VesselParams,
    #[serde(default)]
    pub costs: CostParams,
    #[serde(default)]
    pub planner: PlannerParams,
    #[serde(default)]
    pub goals: GoalParams,
}

fn d_period() -> f64 {
    0.1
}
fn d_substep() -> f64 {
    0.05
}
fn d_max_time() -> f64 {
    120.0
}
fn d_goal_tol() -> f64 {
    2.0
}
fn d_deadlock_speed() -> f64 {
    0.05
}
fn d_deadlock_window() -> f64 {
    30.0
}
fn d_path_clearance() -> f64 {
    1.5
}

impl ScenarioConfig {
    /// A scenario with every tunable at its default.
    pub fn new(map: MapSource, agents: Vec<AgentSpec>) -> Self {
        Self {
            map,
            agents,
            mode: Mode::default(),
            control_period_s: d_period(),
            sim_substep_s: d_substep(),
            max_time_s: d_max_time(),
            goal_tolerance_m: d_goal_tol(),
            deadlock_speed_mps: d_deadlock_speed(),
            deadlock_window_s: d_deadlock_window(),
            path_clearance_m: d_path_clearance(),
            seed: 0,
            randomization: Randomization::default(),
            vessel: VesselParams::default(),
            costs: CostParams::default(),
            planner: PlannerParams::default(),
            goals: GoalParams::default(),
        }
    }

    pub fn vessel_of(&self, a: &AgentSpec) -> VesselParams {
        a.vessel.unwrap_or(self.vessel)
    }

    pub fn costs_of(&self, a: &AgentSpec) -> CostParams {
        a.costs.unwrap_or(self.costs)
    }

    pub fn planner_of(&self, a: &AgentSpec) -> PlannerParams {
        a.planner.unwrap_or(self.planner)
    }

    pub fn goals_of(&self, a: &AgentSpec) -> GoalParams {
        a.goals.unwrap_or(self.goals)
    }

    /// Number of simulator substeps per control period.
    pub fn substeps(&self) -> usize {
        (self.control_period_s / self.sim_substep_s).round() as usize
    }

    /// Checks every invariant that does not need the map.
    pub fn validate(&self) -> Result<(), EngineError> {
        let err = |m: String| Err(EngineError::Config(m));
        if self.agents.is_empty() {
            return err("agents: at least one agent is required".into());
        }
        let mut ids: Vec<AgentId> = self.agents.iter().map(|a| a.id).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return err(format!("agents: duplicate id {}", w[0]));
        }
        for (name, v) in [
            ("control_period_s", self.control_period_s),
            ("sim_substep_s", self.sim_substep_s),
            ("max_time_s", self.max_time_s),
            ("goal_tolerance_m", self.goal_tolerance_m),
            ("deadlock_window_s", self.deadlock_window_s),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return err(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [
            ("deadlock_speed_mps", self.deadlock_speed_mps),
            ("path_clearance_m", self.path_clearance_m),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return err(format!("{name} must be non-negative, got {v}"));
            }
        }
        let ratio = self.control_period_s / self.sim_substep_s;
        if ratio < 0.5 || (ratio - ratio.round()).abs() > 1e-9 {
            return err(format!(
                "control_period_s ({}) must be a whole multiple of sim_substep_s ({})",
                self.control_period_s, self.sim_substep_s
            ));
        }
        let r = &self.randomization;
        for (name, v) in [
            ("randomization.start_radius_m", r.start_radius_m),
            ("randomization.goal_radius_m", r.goal_radius_m),
            ("randomization.heading_jitter_rad", r.heading_jitter_rad),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return err(format!("{name} must be non-negative, got {v}"));
            }
        }
        let check = |scope: String, a: Option<&AgentSpec>| -> Result<(), EngineError> {
            let (v, c, p, g) = match a {
                Some(a) => (
                    self.vessel_of(a),
                    self.costs_of(a),
                    self.planner_of(a),
                    self.goals_of(a),
                ),
                None => (self.vessel, self.costs, self.planner, self.goals),
            };
            let wrap =
                |sect: &str, r: Result<(), String>| r.map_err(|m| EngineError::Config(format!("{scope}{sect}.{m}")));
            wrap("vessel", v.validate())?;
            wrap("costs", c.validate())?;
            wrap("planner", p.validate())?;
            wrap("goals", g.validate())?;
            if (p.dt - self.control_period_s).abs() > 1e-12 {
                return Err(EngineError::Config(format!(
                    "{scope}planner.dt_s ({}) must equal control_period_s ({})",
                    p.dt, self.control_period_s
                )));
            }
            Ok(())
        };
        check(String::new(), None)?;
        for a in &self.agents {
            check(format!("agents[id={}].", a.id), Some(a))?;
            if !(a.script_speed_mps >= 0.0 && a.script_speed_mps.is_finite()) {
                return err(format!("agents[id={}].script_speed_mps must be non-negative", a.id));
            }
            let s = a.start;
            if ![s.x_m, s.y_m, s.heading_rad].iter().all(|v| v.is_finite()) {
                return err(format!("agents[id={}].start must be finite", a.id));
            }
            if a.goal.is_none() && a.controller == ControllerKind::Mppi {
                return err(format!("agents[id={}].goal is required for mppi agents", a.id));
            }
        }
        Ok(())
    }

    /// Checks spawn poses against the map and each other.
    pub fn validate_spawns(&self, grid: &OccupancyGrid) -> Result<(), EngineError> {
        for (i, a) in self.agents.iter().enumerate() {
            let fp = footprint_of(&self.vessel_of(a));
            let pose = (a.start.x_m, a.start.y_m, a.start.heading_rad);
            if footprint_collides(grid, pose, &fp) {
                return Err(EngineError::Spawn(format!(
                    "agent {} starts in collision with the map",
                    a.id
                )));
            }
            for b in &self.agents[..i] {
                let fb = footprint_of(&self.vessel_of(b));
                if footprints_overlap(pose, &fp, (b.start.x_m, b.start.y_m, b.start.heading_rad), &fb) {
                    return Err(EngineError::Spawn(format!(
                        "agents {} and {} overlap at spawn",
                        b.id, a.id
                    )));
                }
            }
            if grid.point_occupied(a.goal_position()) {
                return Err(EngineError::Spawn(format!(
                    "agent {} has its goal inside an obstacle",
                    a.id
                )));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding, leaving out the mode so
    /// every mode run on the same instance shares the hash.
    pub fn content_hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("scenario serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("mode");
        }
        hex(&Sha256::digest(v.to_string().as_bytes()))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub(crate) fn footprint_of(v: &VesselParams) -> Footprint {
    Footprint::new(v.length, v.width)
}

const RANDOMIZE_STREAM: u64 = 0x7363_656e;

fn in_disc<R: Rng>(rng: &mut R, radius: f64) -> Point {
    if radius == 0.0 {
        return Vector2::zeros();
    }
    let r = radius * rng.random::<f64>().sqrt();
    let a = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    Vector2::new(r * a.cos(), r * a.sin())
}

/// Jitters starts, headings and goals uniformly within the configured
/// ranges. The draw depends only on `seed` and the base scenario, never on
/// the controller mode.
pub fn randomize_scenario(base: &ScenarioConfig, seed: u64) -> Result<ScenarioConfig, EngineError> {
    if base.randomization.is_zero() {
        return Ok(base.clone());
    }
    let grid = base.map.build()?;
    randomize_with_grid(base, &grid, seed)
}

pub fn randomize_with_grid(
    base: &ScenarioConfig,
    grid: &OccupancyGrid,
    seed: u64,
) -> Result<ScenarioConfig, EngineError> {
    let mut out = base.clone();
    out.seed = seed;
    if base.randomization.is_zero() {
        return Ok(out);
    }
    let r = base.randomization;
    let mut rng = stream_rng(&[seed, RANDOMIZE_STREAM]);
    let clearance = base.path_clearance_m;
    for i in 0..out.agents.len() {
        if !out.agents[i].randomize {
            continue;
        }
        let a = base.agents[i].clone();
        let fp = footprint_of(&base.vessel_of(&a));
        let mut placed = false;
        for _ in 0..100 {
            let ds = in_disc(&mut rng, r.start_radius_m);
            let dh = if r.heading_jitter_rad > 0.0 {
                rng.random_range(-r.heading_jitter_rad..=r.heading_jitter_rad)
            } else {
                0.0
            };
            let dg = in_disc(&mut rng, r.goal_radius_m);
            let start = Pose {
                x_m: a.start.x_m + ds.x,
                y_m: a.start.y_m + ds.y,
                heading_rad: wrap_angle(a.start.heading_rad + dh),
            };
            let goal = a.goal.map(|g| GoalPoint {
                x_m: g.x_m + dg.x,
                y_m: g.y_m + dg.y,
            });
            let pose = (start.x_m, start.y_m, start.heading_rad);
            if footprint_collides(grid, pose, &fp) {
                continue;
            }
            let clash = out
                .agents
                .iter()
                .enumerate()
                .filter(|(j, b)| *j < i || (*j > i && !b.randomize))
                .any(|(_, b)| {
                    footprints_overlap(
                        pose,
                        &fp,
                        (b.start.x_m, b.start.y_m, b.start.heading_rad),
                        &footprint_of(&out.vessel_of(b)),
                    )
                });
            if clash {
                continue;
            }
            if let Some(g) = goal {
                if grid.clearance_lower_bound(g.position()) <= clearance {
                    continue;
                }
            }
            out.agents[i].start = start;
            out.agents[i].goal = goal;
            placed = true;
            break;
        }
        if !placed {
            return Err(EngineError::Spawn(format!(
                "could not place agent {} collision-free after 100 tries",
                a.id
            )));
        }
    }
    Ok(out)
}
