//! Closed-loop multi-vessel simulation.

mod io;
mod scenario;
mod scripted;

pub use io::{AgentInfo, AgentSnapshot, EpisodeInfo, FrameSink, TeleopCommand, TeleopSource, TickSnapshot};
pub use scenario::{
    randomize_scenario, randomize_with_grid, AgentSpec, ControllerKind, GoalPoint, MapSource, Mode, Pose,
    Randomization, ScenarioConfig, ScriptedPolicy,
};
pub use scripted::{hold_pose, scripted_command, track_heading_speed, ScriptContext};

use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::costs::regulation_flags;
use crate::dynamics::{step_substeps, ControlInput, VesselParams, VesselState};
use crate::goals::{ego_local_goal, predict_local_goal};
use crate::planner::{AgentId, AgentModel, MppiPlanner, PlanResult, PlanningProblem};
use crate::world::{
    footprint_collides, footprints_overlap, plan_global_path, Footprint, GlobalPath, MapError, OccupancyGrid,
    PlanningError, Point,
};

use scenario::{footprint_of, hex};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error("map: {0}")]
    Map(#[from] MapError),
    #[error("agent {agent}: global path: {source}")]
    Path { agent: AgentId, source: PlanningError },
    #[error("spawn: {0}")]
    Spawn(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Deadlock,
    Collision,
}

impl Outcome {
    pub fn name(&self) -> &'static str {
        match self {
            Outcome::Success => "success",
            Outcome::Deadlock => "deadlock",
            Outcome::Collision => "collision",
        }
    }
}

/// Planner health of one agent on one tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TickDiagnostics {
    pub id: AgentId,
    pub min_cost: f64,
    pub effective_sample_size: f64,
    pub valid_samples: usize,
    pub fallback: bool,
}

/// States at the start of a tick and the inputs held over it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub tick: u64,
    pub time_s: f64,
    pub states: Vec<VesselState>,
    /// Zero on the terminal record.
    pub inputs: Vec<ControlInput>,
    pub local_goals: Vec<Point>,
    pub diagnostics: Vec<TickDiagnostics>,
    pub violations: Vec<[AgentId; 2]>,
    pub collision: bool,
    #[serde(default)]
    pub terminal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogAgent {
    pub id: AgentId,
    pub controller: ControllerKind,
    pub goal: Point,
    pub length_m: f64,
    pub width_m: f64,
}

/// Everything needed to audit or replay one episode. Contains no wall-clock
/// data, so equal seeds give byte-identical encodings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub seed: u64,
    pub mode: Mode,
    pub scenario_hash: String,
    pub map: MapSource,
    pub map_hash: String,
    pub control_period_s: f64,
    pub agents: Vec<LogAgent>,
    pub ticks: Vec<TickRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum LogLine {
    Header {
        seed: u64,
        mode: Mode,
        scenario_hash: String,
        map: MapSource,
        map_hash: String,
        control_period_s: f64,
        agents: Vec<LogAgent>,
    },
    Tick(TickRecord),
}

impl EpisodeLog {
    /// SHA-256 of the canonical JSON encoding.
    pub fn content_hash(&self) -> String {
        hex(&Sha256::digest(serde_json::to_vec(self).expect("log serializes")))
    }

    /// Header line followed by one line per tick.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header = LogLine::Header {
            seed: self.seed,
            mode: self.mode,
            scenario_hash: self.scenario_hash.clone(),
            map: self.map.clone(),
            map_hash: self.map_hash.clone(),
            control_period_s: self.control_period_s,
            agents: self.agents.clone(),
        };
        serde_json::to_writer(&mut w, &header)?;
        writeln!(w)?;
        for t in &self.ticks {
            serde_json::to_writer(&mut w, &LogLine::Tick(t.clone()))?;
            writeln!(w)?;
        }
        w.flush()
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> std::io::Result<Self> {
        let bad = |m: String| std::io::Error::new(std::io::ErrorKind::InvalidData, m);
        let mut log: Option<EpisodeLog> = None;
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: LogLine = serde_json::from_str(&line).map_err(|e| bad(format!("line {}: {e}", n + 1)))?;
            match (rec, log.as_mut()) {
                (
                    LogLine::Header {
                        seed,
                        mode,
                        scenario_hash,
                        map,
                        map_hash,
                        control_period_s,
                        agents,
                    },
                    None,
                ) => {
                    log = Some(EpisodeLog {
                        seed,
                        mode,
                        scenario_hash,
                        map,
                        map_hash,
                        control_period_s,
                        agents,
                        ticks: Vec::new(),
                    })
                }
                (LogLine::Tick(t), Some(l)) => l.ticks.push(t),
                (LogLine::Header { .. }, Some(_)) => return Err(bad(format!("line {}: second header", n + 1))),
                (LogLine::Tick(_), None) => return Err(bad(format!("line {}: tick before header", n + 1))),
            }
        }
        log.ok_or_else(|| bad("empty log".into()))
    }

    /// Path length of every agent's logged positions.
    pub fn distances(&self) -> Vec<f64> {
        (0..self.agents.len())
            .map(|i| {
                self.ticks
                    .windows(2)
                    .map(|w| (w[1].states[i].position() - w[0].states[i].position()).norm())
                    .sum()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub seed: u64,
    pub mode: Mode,
    pub outcome: Outcome,
    pub rule_violation_events: usize,
    pub time_to_completion_s: f64,
    pub agent_distance_m: Vec<f64>,
    /// Sum over agents of the distance travelled.
    pub total_distance_m: f64,
    /// Wall time of every planner call, milliseconds.
    pub plan_call_ms: Vec<f64>,
    pub scenario_hash: String,
}

impl RunMetrics {
    pub fn mean_plan_ms(&self) -> f64 {
        if self.plan_call_ms.is_empty() {
            0.0
        } else {
            self.plan_call_ms.iter().sum::<f64>() / self.plan_call_ms.len() as f64
        }
    }
}

/// Integrates every agent over one control period with zero-order hold.
pub fn step_world(
    states: &[VesselState],
    inputs: &[ControlInput],
    vessels: &[VesselParams],
    control_period: f64,
    substeps: usize,
) -> Vec<VesselState> {
    assert_eq!(states.len(), inputs.len(), "one input per agent");
    states
        .iter()
        .zip(inputs)
        .zip(vessels)
        .map(|((s, u), v)| step_substeps(s, u, control_period, substeps, v))
        .collect()
}

/// Unordered pairs (by id) whose executed states satisfy a regulation
/// predicate in either direction.
pub fn violating_pairs(ids: &[AgentId], states: &[VesselState], costs: &crate::costs::CostParams) -> Vec<[AgentId; 2]> {
    let mut out = Vec::new();
    for i in 0..states.len() {
        for j in (i + 1)..states.len() {
            if regulation_flags(&states[i], &states[j], costs).any()
                || regulation_flags(&states[j], &states[i], costs).any()
            {
                out.push([ids[i].min(ids[j]), ids[i].max(ids[j])]);
            }
        }
    }
    out.sort_unstable();
    out
}

/// Any footprint touching the map or another footprint.
pub fn any_collision(grid: &OccupancyGrid, states: &[VesselState], footprints: &[Footprint]) -> bool {
    let pose = |s: &VesselState| (s.x, s.y, s.heading);
    (0..states.len()).any(|i| {
        footprint_collides(grid, pose(&states[i]), &footprints[i])
            || ((i + 1)..states.len())
                .any(|j| footprints_overlap(pose(&states[i]), &footprints[i], pose(&states[j]), &footprints[j]))
    })
}

/// Maximal runs of consecutive ticks during which a pair stays flagged,
/// summed over pairs.
pub fn count_violations(log: &EpisodeLog) -> usize {
    let mut events = 0;
    let mut prev: &[[AgentId; 2]] = &[];
    for t in &log.ticks {
        events += t.violations.iter().filter(|p| !prev.contains(p)).count();
        prev = &t.violations;
    }
    events
}

/// Collision beats success beats deadlock.
pub fn classify_outcome(log: &EpisodeLog, scenario: &ScenarioConfig) -> Outcome {
    if log.ticks.iter().any(|t| t.collision) {
        return Outcome::Collision;
    }
    let reached = (0..log.agents.len()).all(|i| {
        log.ticks.iter().any(|t| {
            t.time_s <= scenario.max_time_s + 1e-9
                && (t.states[i].position() - log.agents[i].goal).norm() <= scenario.goal_tolerance_m
        })
    });
    if reached && !log.ticks.is_empty() {
        Outcome::Success
    } else {
        Outcome::Deadlock
    }
}

struct AgentRuntime {
    spec: AgentSpec,
    vessel: VesselParams,
    footprint: Footprint,
    path: GlobalPath,
    goal: Point,
    start: VesselState,
}

/// A prepared episode that can be advanced one control tick at a time.
pub struct Simulation {
    scenario: ScenarioConfig,
    seed: u64,
    grid: OccupancyGrid,
    map_hash: String,
    agents: Vec<AgentRuntime>,
    models: Vec<AgentModel>,
    /// One planner in centralized mode, one per planning agent otherwise.
    planners: Vec<(Option<usize>, MppiPlanner)>,
    states: Vec<VesselState>,
    reached: Vec<bool>,
    slow_since: Option<f64>,
    tick: u64,
    log: EpisodeLog,
    plan_ms: Vec<f64>,
    outcome: Option<Outcome>,
    sink: Option<Arc<dyn FrameSink>>,
}

fn planner_seed(base: u64, episode: u64) -> u64 {
    base ^ episode
}

impl Simulation {
    /// Randomizes `base` with `seed`, builds the map, plans global paths and
    /// validates everything before the first tick.
    pub fn new(base: &ScenarioConfig, seed: u64) -> Result<Self, EngineError> {
        base.validate()?;
        let grid = base.map.build()?;
        let scenario = randomize_with_grid(base, &grid, seed)?;
        scenario.validate_spawns(&grid)?;
        Self::prepared(scenario, grid, seed)
    }

    fn prepared(scenario: ScenarioConfig, grid: OccupancyGrid, seed: u64) -> Result<Self, EngineError> {
        let mut agents = Vec::with_capacity(scenario.agents.len());
        for a in &scenario.agents {
            let vessel = scenario.vessel_of(a);
            let start = VesselState::at_rest(a.start.x_m, a.start.y_m, a.start.heading_rad);
            let goal = a.goal_position();
            let path = if (goal - start.position()).norm() < 1e-9 {
                GlobalPath::new(vec![goal]).expect("single point")
            } else {
                plan_global_path(&grid, start.position(), goal, scenario.path_clearance_m)
                    .map_err(|e| EngineError::Path { agent: a.id, source: e })?
            };
            agents.push(AgentRuntime {
                spec: a.clone(),
                vessel,
                footprint: footprint_of(&vessel),
                path,
                goal,
                start,
            });
        }
        let models: Vec<AgentModel> = agents
            .iter()
            .map(|a| match a.spec.controller {
                ControllerKind::Mppi => AgentModel::planned(a.spec.id, a.vessel),
                _ => AgentModel::predicted(a.spec.id, a.vessel),
            })
            .collect();
        let mppi: Vec<usize> = (0..agents.len())
            .filter(|&i| agents[i].spec.controller == ControllerKind::Mppi)
            .collect();
        let planners = if mppi.is_empty() {
            Vec::new()
        } else if scenario.mode == Mode::Centralized {
            let mut p = scenario.planner;
            p.seed = planner_seed(p.seed, seed);
            vec![(None, MppiPlanner::new(p))]
        } else {
            mppi.iter()
                .map(|&i| {
                    let mut p = scenario.planner_of(&agents[i].spec);
                    p.seed = planner_seed(p.seed, seed);
                    (Some(i), MppiPlanner::new(p))
                })
                .collect()
        };
        let map_hash = grid.content_hash();
        let log = EpisodeLog {
            seed,
            mode: scenario.mode,
            scenario_hash: scenario.content_hash(),
            map: scenario.map.clone(),
            map_hash: map_hash.clone(),
            control_period_s: scenario.control_period_s,
            agents: agents
                .iter()
                .map(|a| LogAgent {
                    id: a.spec.id,
                    controller: a.spec.controller,
                    goal: a.goal,
                    length_m: a.vessel.length,
                    width_m: a.vessel.width,
                })
                .collect(),
            ticks: Vec::new(),
        };
        let states = agents.iter().map(|a| a.start).collect();
        let n = agents.len();
        Ok(Self {
            scenario,
            seed,
            grid,
            map_hash,
            agents,
            models,
            planners,
            states,
            reached: vec![false; n],
            slow_since: None,
            tick: 0,
            log,
            plan_ms: Vec::new(),
            outcome: None,
            sink: None,
        })
    }

    /// Attaches a frame sink and announces the episode to it.
    pub fn attach_sink(&mut self, sink: Arc<dyn FrameSink>) {
        sink.begin(&self.info());
        self.sink = Some(sink);
    }

    pub fn info(&self) -> EpisodeInfo {
        EpisodeInfo {
            map: self.scenario.map.clone(),
            map_hash: self.map_hash.clone(),
            mode: self.scenario.mode,
            seed: self.seed,
            control_period_s: self.scenario.control_period_s,
            agents: self
                .agents
                .iter()
                .map(|a| AgentInfo {
                    id: a.spec.id,
                    controller: a.spec.controller,
                    length_m: a.vessel.length,
                    width_m: a.vessel.width,
                    goal: a.goal,
                })
                .collect(),
        }
    }

    /// The randomized scenario actually being run.
    pub fn scenario(&self) -> &ScenarioConfig {
        &self.scenario
    }

    pub fn grid(&self) -> &OccupancyGrid {
        &self.grid
    }

    pub fn states(&self) -> &[VesselState] {
        &self.states
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * self.scenario.control_period_s
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn outcome(&self) -> Option<Outcome> {
        self.outcome
    }

    pub fn log(&self) -> &EpisodeLog {
        &self.log
    }

    pub fn ids(&self) -> Vec<AgentId> {
        self.agents.iter().map(|a| a.spec.id).collect()
    }

    fn local_goals(&self) -> Vec<Point> {
        self.agents
            .iter()
            .zip(&self.states)
            .map(|(a, s)| ego_local_goal(&a.path, s.position(), self.scenario.goals_of(&a.spec).r_pg))
            .collect()
    }

    fn termination(&mut self, collision: bool) -> Option<Outcome> {
        let t = self.time();
        for (i, a) in self.agents.iter().enumerate() {
            if (self.states[i].position() - a.goal).norm() <= self.scenario.goal_tolerance_m {
                self.reached[i] = true;
            }
        }
        if collision {
            return Some(Outcome::Collision);
        }
        if self.reached.iter().all(|r| *r) {
            return Some(Outcome::Success);
        }
        if t >= self.scenario.max_time_s - 1e-9 {
            return Some(Outcome::Deadlock);
        }
        if self.states.iter().all(|s| s.speed() < self.scenario.deadlock_speed_mps) {
            let since = *self.slow_since.get_or_insert(t);
            if t - since >= self.scenario.deadlock_window_s - 1e-9 {
                return Some(Outcome::Deadlock);
            }
        } else {
            self.slow_since = None;
        }
        None
    }

    fn plan_all(&mut self, goals: &[Point]) -> (Vec<Option<ControlInput>>, Vec<TickDiagnostics>, Vec<Vec<Point>>) {
        let n = self.agents.len();
        let mut commands = vec![None; n];
        let mut diags = Vec::new();
        let mut planned = vec![Vec::new(); n];
        let scenario = &self.scenario;
        let is_mppi = |i: usize| self.agents[i].spec.controller == ControllerKind::Mppi;
        for (ego, planner) in self.planners.iter_mut() {
            let ego = *ego;
            let pp = *planner.params();
            let (costs, goal_params) = match ego {
                Some(e) => (
                    scenario.costs_of(&self.agents[e].spec),
                    scenario.goals_of(&self.agents[e].spec),
                ),
                None => (scenario.costs, scenario.goals),
            };
            let problem_goals: Vec<Point> = (0..n)
                .map(|j| {
                    let shared = match (scenario.mode, ego) {
                        (_, Some(e)) if e == j => true,
                        (Mode::Centralized, _) | (Mode::DecComm, _) => is_mppi(j),
                        (Mode::DecNocomm, _) => false,
                    };
                    if shared {
                        goals[j]
                    } else {
                        predict_local_goal(&self.states[j], pp.horizon_steps, pp.dt, goal_params.k_s, &self.grid)
                    }
                })
                .collect();
            let result: PlanResult = planner.plan(&PlanningProblem {
                agents: &self.models,
                states: &self.states,
                goals: &problem_goals,
                grid: &self.grid,
                costs: &costs,
            });
            self.plan_ms.push(result.diagnostics.wall_time_ms);
            let owned: Vec<usize> = match ego {
                Some(e) => vec![e],
                None => (0..n).filter(|&j| is_mppi(j)).collect(),
            };
            for j in owned {
                commands[j] = Some(result.commands[j]);
                planned[j] = result.trajectories[j].iter().map(|s| s.position()).collect();
                let d = &result.diagnostics.agents[j];
                diags.push(TickDiagnostics {
                    id: d.id,
                    min_cost: d.min_cost,
                    effective_sample_size: d.effective_sample_size,
                    valid_samples: d.valid_samples,
                    fallback: d.fallback,
                });
            }
        }
        diags.sort_by_key(|d| d.id);
        (commands, diags, planned)
    }

    /// Advances one control tick. Returns the outcome once the episode has
    /// ended; further calls are no-ops.
    pub fn step(&mut self, teleop: Option<&dyn TeleopSource>) -> Option<Outcome> {
        if self.outcome.is_some() {
            return self.outcome;
        }
        let ids = self.ids();
        let footprints: Vec<Footprint> = self.agents.iter().map(|a| a.footprint).collect();
        let collision = any_collision(&self.grid, &self.states, &footprints);
        let violations = violating_pairs(&ids, &self.states, &self.scenario.costs);
        let goals = self.local_goals();
        let time_s = self.time();

        if let Some(outcome) = self.termination(collision) {
            self.outcome = Some(outcome);
            self.log.ticks.push(TickRecord {
                tick: self.tick,
                time_s,
                states: self.states.clone(),
                inputs: vec![ControlInput::ZERO; self.agents.len()],
                local_goals: goals,
                diagnostics: Vec::new(),
                violations,
                collision,
                terminal: true,
            });
            if let Some(s) = &self.sink {
                s.end();
            }
            return self.outcome;
        }

        let (planned_cmds, diagnostics, mut planned) = self.plan_all(&goals);
        let inputs: Vec<ControlInput> = (0..self.agents.len())
            .map(|i| {
                let a = &self.agents[i];
                match a.spec.controller {
                    ControllerKind::Mppi => planned_cmds[i].expect("every mppi agent is planned"),
                    ControllerKind::Teleop => teleop
                        .and_then(|t| t.latest(a.spec.id))
                        .map(|c| c.to_thrust(a.vessel.f_max))
                        .unwrap_or(ControlInput::ZERO),
                    ControllerKind::Scripted(policy) => {
                        let others: Vec<VesselState> = (0..self.states.len())
                            .filter(|&j| j != i)
                            .map(|j| self.states[j])
                            .collect();
                        scripted_command(
                            policy,
                            &self.states[i],
                            &ScriptContext {
                                start: &a.start,
                                local_goal: goals[i],
                                goal: a.goal,
                                goal_tolerance: self.scenario.goal_tolerance_m,
                                speed: a.spec.script_speed_mps,
                                vessel: &a.vessel,
                                others: &others,
                            },
                        )
                    }
                }
            })
            .collect();

        if let Some(sink) = &self.sink {
            let snap = TickSnapshot {
                tick: self.tick,
                time_s,
                agents: (0..self.agents.len())
                    .map(|i| AgentSnapshot {
                        id: ids[i],
                        controller: self.agents[i].spec.controller,
                        state: self.states[i],
                        input: inputs[i],
                        local_goal: goals[i],
                        planned: std::mem::take(&mut planned[i]),
                    })
                    .collect(),
                violations: violations.clone(),
                collision,
            };
            sink.publish(&snap);
        }

        self.log.ticks.push(TickRecord {
            tick: self.tick,
            time_s,
            states: self.states.clone(),
            inputs: inputs.clone(),
            local_goals: goals,
            diagnostics,
            violations,
            collision,
            terminal: false,
        });

        let vessels: Vec<VesselParams> = self.agents.iter().map(|a| a.vessel).collect();
        self.states = step_world(
            &self.states,
            &inputs,
            &vessels,
            self.scenario.control_period_s,
            self.scenario.substeps(),
        );
        self.tick += 1;
        None
    }

    /// Runs to completion.
    pub fn run(&mut self, teleop: Option<&dyn TeleopSource>) -> Outcome {
        loop {
            if let Some(o) = self.step(teleop) {
                return o;
            }
        }
    }

    /// Metrics and log of a finished episode.
    pub fn finish(self) -> (RunMetrics, EpisodeLog) {
        let outcome = self
            .outcome
            .unwrap_or_else(|| classify_outcome(&self.log, &self.scenario));
        let distances = self.log.distances();
        let metrics = RunMetrics {
            seed: self.seed,
            mode: self.scenario.mode,
            outcome,
            rule_violation_events: count_violations(&self.log),
            time_to_completion_s: self.log.ticks.last().map(|t| t.time_s).unwrap_or(0.0),
            total_distance_m: distances.iter().sum(),
            agent_distance_m: distances,
            plan_call_ms: self.plan_ms,
            scenario_hash: self.log.scenario_hash.clone(),
        };
        (metrics, self.log)
    }
}

/// Runs one seeded episode without teleoperation or publication.
pub fn run_episode(scenario: &ScenarioConfig, seed: u64) -> Result<(RunMetrics, EpisodeLog), EngineError> {
    let mut sim = Simulation::new(scenario, seed)?;
    sim.run(None);
    Ok(sim.finish())
}
