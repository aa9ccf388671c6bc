//! Hand-written controllers for non-planning vessels.

use nalgebra::Vector2;

use crate::dynamics::{wrap_angle, ControlInput, VesselParams, VesselState};
use crate::world::Point;

use super::scenario::ScriptedPolicy;

/// Oncoming vessels closer than this trigger the wrong-side dodge.
pub const DODGE_RANGE_M: f64 = 25.0;
/// Lateral offset of the dodge, to port.
pub const DODGE_OFFSET_M: f64 = 5.0;

/// Distributes body-frame force and moment demands over the four thrusters.
pub fn allocate(fx: f64, fy: f64, mz: f64, v: &VesselParams) -> ControlInput {
    let m = mz / v.lever_a;
    ControlInput::new(0.5 * fx + m, 0.5 * fx - m, 0.5 * fy, 0.5 * fy).clamped(v.f_max)
}

/// Heading and surge-speed regulator with sway damping.
pub fn track_heading_speed(s: &VesselState, heading: f64, speed: f64, v: &VesselParams) -> ControlInput {
    let [m11, m22, m33] = v.mass_diag;
    let [xu, _, _] = v.drag_diag;
    let fx = xu * speed + m11 * (speed - s.surge);
    let fy = -m22 * s.sway;
    let mz = m33 * (wrap_angle(heading - s.heading) - 2.0 * s.yaw_rate);
    allocate(fx, fy, mz, v)
}

/// PD station keeping on a pose.
pub fn hold_pose(s: &VesselState, target: Point, heading: f64, v: &VesselParams) -> ControlInput {
    let [m11, m22, m33] = v.mass_diag;
    let (sn, cs) = s.heading.sin_cos();
    let e = target - s.position();
    let (ex, ey) = (cs * e.x + sn * e.y, -sn * e.x + cs * e.y);
    let fx = m11 * (0.5 * ex - 1.5 * s.surge);
    let fy = m22 * (0.5 * ey - 1.5 * s.sway);
    let mz = m33 * (wrap_angle(heading - s.heading) - 2.0 * s.yaw_rate);
    allocate(fx, fy, mz, v)
}

/// Inputs of everything a scripted vessel needs to know.
#[derive(Debug, Clone, Copy)]
pub struct ScriptContext<'a> {
    pub start: &'a VesselState,
    pub local_goal: Point,
    pub goal: Point,
    pub goal_tolerance: f64,
    pub speed: f64,
    pub vessel: &'a VesselParams,
    pub others: &'a [VesselState],
}

pub fn scripted_command(policy: ScriptedPolicy, s: &VesselState, ctx: &ScriptContext<'_>) -> ControlInput {
    let v = ctx.vessel;
    match policy {
        ScriptedPolicy::ConstantVelocity => track_heading_speed(s, ctx.start.heading, ctx.speed, v),
        ScriptedPolicy::HoldPosition => hold_pose(s, ctx.start.position(), ctx.start.heading, v),
        ScriptedPolicy::WrongSideAvoider => {
            if (ctx.goal - s.position()).norm() <= ctx.goal_tolerance {
                return hold_pose(s, ctx.goal, s.heading, v);
            }
            let p = s.position();
            let to_goal = ctx.local_goal - p;
            let dir = if to_goal.norm() > 1e-9 {
                to_goal.normalize()
            } else {
                Vector2::new(s.heading.cos(), s.heading.sin())
            };
            let threat = ctx.others.iter().any(|o| {
                let rel = o.position() - p;
                let d = rel.norm();
                d < DODGE_RANGE_M && rel.dot(&dir) > 0.0 && o.world_velocity().dot(&dir) < 0.0
            });
            let target = if threat {
                ctx.local_goal + Vector2::new(-dir.y, dir.x) * DODGE_OFFSET_M
            } else {
                ctx.local_goal
            };
            let d = target - p;
            track_heading_speed(s, d.y.atan2(d.x), ctx.speed, v)
        }
    }
}
