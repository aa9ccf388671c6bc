//! Multi-vessel motion planning for urban canals.
//!
//! Sampling-based model predictive control over a 3-DOF surface vessel model,
//! with cost terms for static clearance, vessel-to-vessel collisions and
//! right-of-way / head-on regulation, plus a fixed-rate simulation engine
//! and scenario runner.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod costs;
pub mod dynamics;
pub mod engine;
pub mod goals;
pub mod planner;
pub mod world;

pub use costs::{CostParams, CrossSign};
pub use dynamics::{ControlInput, VesselParams, VesselState};
pub use engine::{run_episode, EpisodeLog, Mode, Outcome, RunMetrics, ScenarioConfig, Simulation};
pub use goals::GoalParams;
pub use planner::{AgentId, AgentModel, MppiPlanner, PlanResult, PlannerParams, PlanningProblem};
pub use world::{Footprint, GlobalPath, MapError, OccupancyGrid, PlanningError, Point};
