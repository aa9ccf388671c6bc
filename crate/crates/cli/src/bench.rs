//! Planner wall-time scaling with the number of agents.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use canal_core::engine::{step_world, EngineError, MapSource};
use canal_core::goals::ego_local_goal;
use canal_core::world::plan_global_path;
use canal_core::{
    AgentModel, CostParams, GoalParams, MppiPlanner, PlannerParams, PlanningProblem, Point, VesselParams, VesselState,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub agents: usize,
    pub samples: usize,
    pub horizon_steps: usize,
    pub calls: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
}

/// Four-arm crossing, 50 m arms, 20 m wide.
pub fn benchmark_map() -> MapSource {
    MapSource::Crossing {
        arm_length_m: 50.0,
        width_m: 20.0,
        resolution_m: 0.1,
    }
}

/// Start and goal of benchmark agent `i`: arms are filled in turn, each
/// vessel keeping to the starboard half of its arm and heading across the
/// junction. Later rings start 8 m further in.
pub fn benchmark_agent(i: usize) -> ((f64, f64, f64), Point) {
    let d = 30.0 - 8.0 * (i / 4) as f64;
    match i % 4 {
        0 => ((-d, -3.0, 0.0), Point::new(30.0, -3.0)),
        1 => ((d, 3.0, PI), Point::new(-30.0, 3.0)),
        2 => ((3.0, -d, FRAC_PI_2), Point::new(3.0, 30.0)),
        _ => ((-3.0, d, -FRAC_PI_2), Point::new(-3.0, -30.0)),
    }
}

/// Closed-loop planning on the crossing with one planner over all agents.
/// Reports the wall time of `calls` consecutive plan calls.
pub fn benchmark(agents: usize, calls: usize, params: PlannerParams) -> Result<BenchmarkReport, EngineError> {
    if !(1..=12).contains(&agents) {
        return Err(EngineError::Config(format!(
            "benchmark supports 1 to 12 agents, got {agents}"
        )));
    }
    if calls < 1 {
        return Err(EngineError::Config("calls must be at least 1".into()));
    }
    params
        .validate()
        .map_err(|e| EngineError::Config(format!("planner.{e}")))?;
    let grid = benchmark_map().build()?;
    let vessel = VesselParams::default();
    let costs = CostParams::default();
    let goal_params = GoalParams::default();
    let models: Vec<AgentModel> = (0..agents).map(|i| AgentModel::planned(i as u32, vessel)).collect();
    let mut states = Vec::with_capacity(agents);
    let mut paths = Vec::with_capacity(agents);
    for i in 0..agents {
        let ((x, y, h), goal) = benchmark_agent(i);
        states.push(VesselState::at_rest(x, y, h));
        let path = plan_global_path(&grid, Point::new(x, y), goal, 1.5).map_err(|e| EngineError::Path {
            agent: i as u32,
            source: e,
        })?;
        paths.push(path);
    }
    let vessels = vec![vessel; agents];
    let mut planner = MppiPlanner::new(params);
    let mut times = Vec::with_capacity(calls);
    for _ in 0..calls {
        let goals: Vec<Point> = states
            .iter()
            .zip(&paths)
            .map(|(s, p)| ego_local_goal(p, s.position(), goal_params.r_pg))
            .collect();
        let result = planner.plan(&PlanningProblem {
            agents: &models,
            states: &states,
            goals: &goals,
            grid: &grid,
            costs: &costs,
        });
        times.push(result.diagnostics.wall_time_ms);
        states = step_world(&states, &result.commands, &vessels, params.dt, 2);
    }
    let n = times.len() as f64;
    let mean = times.iter().sum::<f64>() / n;
    let std = (times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n).sqrt();
    Ok(BenchmarkReport {
        agents,
        samples: params.samples,
        horizon_steps: params.horizon_steps,
        calls,
        mean_ms: mean,
        std_ms: std,
        min_ms: times.iter().copied().fold(f64::INFINITY, f64::min),
        max_ms: times.iter().copied().fold(0.0, f64::max),
    })
}
