//! Local goals: look-ahead extraction from the ego's global path and
//! constant-velocity prediction for vessels that do not share theirs.

use serde::{Deserialize, Serialize};

use crate::dynamics::VesselState;
use crate::world::{project_to_free, GlobalPath, OccupancyGrid, Point};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GoalParams {
    /// Look-ahead radius for the ego's local goal.
    #[serde(rename = "r_pg_m")]
    pub r_pg: f64,
    /// Fraction of the horizon used to extrapolate other vessels.
    pub k_s: f64,
}

impl Default for GoalParams {
    fn default() -> Self {
        Self { r_pg: 15.0, k_s: 0.8 }
    }
}

impl GoalParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.r_pg > 0.0) {
            return Err(format!("r_pg_m must be positive, got {}", self.r_pg));
        }
        if !(self.k_s > 0.0 && self.k_s <= 2.0) {
            return Err(format!("k_s must lie in (0, 2], got {}", self.k_s));
        }
        Ok(())
    }
}

fn closest_on_segment(a: Point, b: Point, p: Point) -> Point {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return a;
    }
    a + ab * ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
}

/// Closest point on the path polyline to `p`.
pub fn closest_point_on_path(path: &GlobalPath, p: Point) -> Point {
    let w = path.waypoints();
    if w.len() == 1 {
        return w[0];
    }
    w.windows(2)
        .map(|s| closest_on_segment(s[0], s[1], p))
        .min_by(|a, b| (a - p).norm_squared().total_cmp(&(b - p).norm_squared()))
        .expect("at least one segment")
}

/// Searches the path backward from its end for the first point within
/// `r_pg` of `position`, interpolating along segments so the goal lands on
/// the look-ahead circle. Falls back to the closest path point when the
/// whole path is out of reach.
pub fn ego_local_goal(path: &GlobalPath, position: Point, r_pg: f64) -> Point {
    let w = path.waypoints();
    let last = *w.last().expect("paths are never empty");
    let r2 = r_pg * r_pg;
    if (last - position).norm_squared() <= r2 {
        return last;
    }
    for k in (0..w.len().saturating_sub(1)).rev() {
        let (a, b) = (w[k], w[k + 1]);
        // largest s in [0, 1] with |a + s (b - a) - position| <= r_pg
        let d = b - a;
        let f = a - position;
        let qa = d.norm_squared();
        let qb = 2.0 * f.dot(&d);
        let qc = f.norm_squared() - r2;
        let disc = qb * qb - 4.0 * qa * qc;
        if qa == 0.0 || disc < 0.0 {
            continue;
        }
        let sq = disc.sqrt();
        let s_hi = (-qb + sq) / (2.0 * qa);
        let s_lo = (-qb - sq) / (2.0 * qa);
        if s_hi < 0.0 || s_lo > 1.0 {
            continue;
        }
        return a + d * s_hi.min(1.0);
    }
    closest_point_on_path(path, position)
}

/// Constant-velocity goal guess for another vessel: its position advanced by
/// `k_s * horizon_s` times its world velocity, pulled back into free space.
pub fn predict_local_goal(state: &VesselState, horizon_steps: usize, dt: f64, k_s: f64, grid: &OccupancyGrid) -> Point {
    let p = state.position();
    let target = p + state.world_velocity() * (k_s * horizon_steps as f64 * dt);
    if grid.point_occupied(target) {
        project_to_free(grid, target, p)
    } else {
        target
    }
}
