//! Stage costs: the per-agent cost evaluated on individual rollouts and the
//! configuration cost evaluated on joint (recombined) system states.

use std::f64::consts::FRAC_PI_2;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlInput, VesselState};
use crate::world::{footprint_collides, footprints_overlap, Footprint, OccupancyGrid, Point};

/// Which operand order the right-of-way cross product uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossSign {
    /// `cross_z(v_ego, v_other)`.
    #[default]
    EgoOther,
    /// `cross_z(v_other, v_ego)`.
    OtherEgo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostParams {
    /// Static and inter-vessel collision penalty, per timestep.
    pub c_collision: f64,
    /// Right-of-way violation penalty.
    pub c_row: f64,
    /// Avoid-to-the-right violation penalty.
    pub c_atr: f64,
    pub k_tracking: f64,
    /// Rotation penalty scale below `slow_speed_mps`.
    pub k_rot_slow: f64,
    pub k_rot: f64,
    #[serde(rename = "slow_speed_mps")]
    pub slow_speed_threshold: f64,
    /// Overspeed penalty, per timestep.
    pub c_speed: f64,
    /// Sample (control effort) cost scale.
    pub gamma: f64,
    /// Angular margin of the velocity checks.
    #[serde(rename = "delta_rad")]
    pub delta: f64,
    #[serde(rename = "regulation_radius_m")]
    pub regulation_radius: f64,
    /// Other vessels slower than this never trigger regulation costs.
    #[serde(rename = "significant_speed_mps")]
    pub significant_speed: f64,
    pub cross_sign: CrossSign,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            c_collision: 2000.0,
            c_row: 100.0,
            c_atr: 100.0,
            k_tracking: 3.5,
            k_rot_slow: 3.0,
            k_rot: 1.0,
            slow_speed_threshold: 0.5,
            c_speed: 10.0,
            gamma: 0.001,
            delta: 1.0,
            regulation_radius: 8.0,
            significant_speed: 0.5,
            cross_sign: CrossSign::EgoOther,
        }
    }
}

impl CostParams {
    pub fn validate(&self) -> Result<(), String> {
        let penalties = [
            ("c_collision", self.c_collision),
            ("c_row", self.c_row),
            ("c_atr", self.c_atr),
            ("k_tracking", self.k_tracking),
            ("k_rot_slow", self.k_rot_slow),
            ("k_rot", self.k_rot),
            ("c_speed", self.c_speed),
            ("gamma", self.gamma),
            ("slow_speed_mps", self.slow_speed_threshold),
            ("significant_speed_mps", self.significant_speed),
        ];
        for (name, v) in penalties {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("{name} must be a finite non-negative number, got {v}"));
            }
        }
        if !(self.delta > 0.0 && self.delta < FRAC_PI_2) {
            return Err(format!("delta_rad must lie in (0, pi/2), got {}", self.delta));
        }
        if !(self.regulation_radius > 0.0) {
            return Err(format!(
                "regulation_radius_m must be positive, got {}",
                self.regulation_radius
            ));
        }
        Ok(())
    }
}

#[inline]
pub fn cross_z(a: Vector2<f64>, b: Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Normalized distance-to-goal. Returns 0 when goal and start coincide.
#[inline]
pub fn tracking_cost(p_t: Point, p_goal: Point, p_start: Point, k_tracking: f64) -> f64 {
    let denom = (p_goal - p_start).norm();
    if denom == 0.0 {
        return 0.0;
    }
    k_tracking * (p_goal - p_t).norm() / denom
}

/// Control-effort term `1/2 gamma (u' S^-1 u + 2 u' S^-1 eps)` for diagonal `S`.
#[inline]
pub fn sample_cost(u: &ControlInput, eps: &[f64; 4], sigma_diag: &[f64; 4], gamma: f64) -> f64 {
    let mut quad = 0.0;
    let mut cross = 0.0;
    for c in 0..4 {
        quad += u.0[c] * u.0[c] / sigma_diag[c];
        cross += u.0[c] * eps[c] / sigma_diag[c];
    }
    0.5 * gamma * (quad + 2.0 * cross)
}

/// Rotation penalty, steeper when nearly stationary.
#[inline]
pub fn rotation_cost(state: &VesselState, params: &CostParams) -> f64 {
    let k = if state.speed() < params.slow_speed_threshold {
        params.k_rot_slow
    } else {
        params.k_rot
    };
    k * state.yaw_rate.abs()
}

/// Everything an agent-centric stage cost needs besides the state itself.
#[derive(Debug, Clone, Copy)]
pub struct AgentCostContext<'a> {
    pub grid: &'a OccupancyGrid,
    pub footprint: Footprint,
    pub goal: Point,
    /// Position at the start of the horizon.
    pub start: Point,
    pub v_max: f64,
    pub sigma_diag: [f64; 4],
    pub params: &'a CostParams,
}

/// Static collision + rotation + tracking + overspeed + sample cost.
pub fn agent_stage_cost(
    state: &VesselState,
    input: &ControlInput,
    noise: &[f64; 4],
    ctx: &AgentCostContext<'_>,
) -> f64 {
    let p = ctx.params;
    let mut cost = 0.0;
    if footprint_collides(ctx.grid, (state.x, state.y, state.heading), &ctx.footprint) {
        cost += p.c_collision;
    }
    cost += rotation_cost(state, p);
    cost += tracking_cost(state.position(), ctx.goal, ctx.start, p.k_tracking);
    if state.speed() > ctx.v_max {
        cost += p.c_speed;
    }
    cost + sample_cost(input, noise, &ctx.sigma_diag, p.gamma)
}

/// Is `other` strictly on the ego's starboard side, within the regulation
/// radius, and moving with significant speed?
pub fn starboard_within_region(
    ego_pose: (f64, f64, f64),
    other_pos: Point,
    other_speed: f64,
    params: &CostParams,
) -> bool {
    let rel = other_pos - Vector2::new(ego_pose.0, ego_pose.1);
    if rel.norm_squared() > params.regulation_radius * params.regulation_radius {
        return false;
    }
    let dir = Vector2::new(ego_pose.2.cos(), ego_pose.2.sin());
    cross_z(dir, rel) < 0.0 && other_speed > params.significant_speed
}

/// Crossing check: the other vessel approaches from the right.
pub fn row_velocity_check(v_i: Vector2<f64>, v_j: Vector2<f64>, delta: f64, sign: CrossSign) -> bool {
    let cross = match sign {
        CrossSign::EgoOther => cross_z(v_i, v_j),
        CrossSign::OtherEgo => cross_z(v_j, v_i),
    };
    cross < v_i.norm() * v_j.norm() * (-FRAC_PI_2 + delta).sin()
}

/// Head-on check: velocities within `delta` of anti-parallel.
pub fn headon_velocity_check(v_i: Vector2<f64>, v_j: Vector2<f64>, delta: f64) -> bool {
    v_i.dot(&v_j) < v_i.norm() * v_j.norm() * (std::f64::consts::PI - delta).cos()
}

/// Regulation predicates for the ordered pair (ego, other).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RegulationFlags {
    /// Right of way not given to a vessel approaching from starboard.
    pub row: bool,
    /// Head-on encounter resolved on the wrong side.
    pub atr: bool,
}

impl RegulationFlags {
    pub fn any(&self) -> bool {
        self.row || self.atr
    }
}

pub fn regulation_flags(ego: &VesselState, other: &VesselState, params: &CostParams) -> RegulationFlags {
    let other_speed = other.speed();
    if !starboard_within_region((ego.x, ego.y, ego.heading), other.position(), other_speed, params) {
        return RegulationFlags::default();
    }
    let (vi, vj) = (ego.world_velocity(), other.world_velocity());
    RegulationFlags {
        row: row_velocity_check(vi, vj, params.delta, params.cross_sign),
        atr: headon_velocity_check(vi, vj, params.delta),
    }
}

/// Joint stage cost of a set of agents at one timestep: inter-vessel
/// collisions per unordered pair, regulation penalties per ordered pair.
pub fn configuration_stage_cost(states: &[VesselState], footprints: &[Footprint], params: &CostParams) -> f64 {
    let mut cost = 0.0;
    for i in 0..states.len() {
        for j in (i + 1)..states.len() {
            cost += pair_stage_cost(&states[i], &footprints[i], &states[j], &footprints[j], params);
        }
    }
    cost
}

/// Configuration cost contributed by one unordered pair.
#[inline]
pub fn pair_stage_cost(a: &VesselState, fa: &Footprint, b: &VesselState, fb: &Footprint, params: &CostParams) -> f64 {
    let d2 = (a.x - b.x).powi(2) + (a.y - b.y).powi(2);
    let touch = fa.circumradius() + fb.circumradius();
    let r = params.regulation_radius;
    if d2 > touch * touch && d2 > r * r {
        return 0.0;
    }
    let mut cost = 0.0;
    if footprints_overlap((a.x, a.y, a.heading), fa, (b.x, b.y, b.heading), fb) {
        cost += params.c_collision;
    }
    for (ego, other) in [(a, b), (b, a)] {
        let f = regulation_flags(ego, other, params);
        if f.row {
            cost += params.c_row;
        }
        if f.atr {
            cost += params.c_atr;
        }
    }
    cost
}
