//! Multi-agent MPPI with two-stage sample evaluation.
//!
//! Every agent of the local system is rolled out independently against the
//! static map and scored with its agent-centric cost. Rollouts that hit a
//! static obstacle are discarded, the survivors of each agent are drawn
//! uniformly (with replacement) into `K` joint system samples, and only then
//! are inter-vessel collisions and regulation violations added. The joint
//! costs drive the usual exponential importance weights.
//!
//! Agents whose sampled trajectories can never come within interaction range
//! of each other are split into separate groups and weighted independently;
//! for such agents every configuration term is identically zero.

use std::collections::HashMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::costs::{agent_stage_cost, pair_stage_cost, AgentCostContext, CostParams};
use crate::dynamics::{step, ControlInput, VesselParams, VesselState};
use crate::world::{Footprint, OccupancyGrid, Point};

pub type AgentId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerParams {
    /// Number of sampled input sequences per agent (K).
    pub samples: usize,
    /// Horizon length in steps (T).
    pub horizon_steps: usize,
    #[serde(rename = "dt_s")]
    pub dt: f64,
    /// Inverse temperature of the importance weights.
    pub lambda: f64,
    /// Exploration variance scale.
    pub nu: f64,
    /// Per-channel input variance.
    pub sigma_diag: [f64; 4],
    pub seed: u64,
}

impl Default for PlannerParams {
    fn default() -> Self {
        Self {
            samples: 2000,
            horizon_steps: 100,
            dt: 0.1,
            lambda: 15.0,
            nu: 12.0,
            sigma_diag: [0.5, 0.5, 0.01, 0.01],
            seed: 0,
        }
    }
}

impl PlannerParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.samples < 1 {
            return Err("samples must be at least 1".into());
        }
        if self.horizon_steps < 1 {
            return Err("horizon_steps must be at least 1".into());
        }
        if !(self.dt > 0.0) {
            return Err(format!("dt_s must be positive, got {}", self.dt));
        }
        if !(self.lambda > 0.0) {
            return Err(format!("lambda must be positive, got {}", self.lambda));
        }
        if !(self.nu >= 1.0) {
            return Err(format!("nu must be at least 1, got {}", self.nu));
        }
        if self.sigma_diag.iter().any(|s| !(*s > 0.0)) {
            return Err("sigma_diag entries must be strictly positive".into());
        }
        Ok(())
    }

    /// Standard deviation of the exploration noise per channel.
    pub fn noise_std(&self) -> [f64; 4] {
        self.sigma_diag.map(|s| (self.nu * s).sqrt())
    }
}

/// Static description of one vessel as the planner sees it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentModel {
    pub id: AgentId,
    pub vessel: VesselParams,
    /// Inputs are not sampled: the vessel is rolled out once, holding its
    /// current surge and sway, and every system sample shares that rollout.
    pub predicted: bool,
}

impl AgentModel {
    pub fn planned(id: AgentId, vessel: VesselParams) -> Self {
        Self {
            id,
            vessel,
            predicted: false,
        }
    }

    pub fn predicted(id: AgentId, vessel: VesselParams) -> Self {
        Self {
            id,
            vessel,
            predicted: true,
        }
    }

    pub fn footprint(&self) -> Footprint {
        Footprint::new(self.vessel.length, self.vessel.width)
    }
}

/// One planning query over a local multi-agent system.
#[derive(Debug, Clone, Copy)]
pub struct PlanningProblem<'a> {
    pub agents: &'a [AgentModel],
    pub states: &'a [VesselState],
    /// Local goal of every agent (own, communicated or predicted).
    pub goals: &'a [Point],
    pub grid: &'a OccupancyGrid,
    pub costs: &'a CostParams,
}

const STREAM_NOISE: u64 = 0x6e6f_6973;
const STREAM_RECOMBINE: u64 = 0x7265_636f;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent RNG stream from a tuple of keys.
pub fn stream_rng(keys: &[u64]) -> ChaCha8Rng {
    let seed = keys
        .iter()
        .fold(0x243f_6a88_85a3_08d3u64, |acc, k| splitmix(acc ^ splitmix(*k)));
    ChaCha8Rng::seed_from_u64(seed)
}

/// Fills `out` with zero-mean Gaussian noise of variance `nu * sigma_c`
/// per channel for sample `k` of agent `agent` on planner call `call`.
pub fn sample_noise_sequence(params: &PlannerParams, call: u64, agent: AgentId, k: usize, out: &mut [[f64; 4]]) {
    let std = params.noise_std();
    let mut rng = stream_rng(&[params.seed, STREAM_NOISE, call, agent as u64, k as u64]);
    for eps in out.iter_mut() {
        for c in 0..4 {
            let z: f64 = rng.sample(StandardNormal);
            eps[c] = std[c] * z;
        }
    }
}

/// Noise tensor `[agent][k * T + t]` for one planner call.
pub fn sample_noise(params: &PlannerParams, agents: &[AgentId], call: u64) -> Vec<Vec<[f64; 4]>> {
    let t = params.horizon_steps;
    agents
        .iter()
        .map(|&a| {
            let mut buf = vec![[0.0; 4]; params.samples * t];
            buf.par_chunks_mut(t)
                .enumerate()
                .for_each(|(k, chunk)| sample_noise_sequence(params, call, a, k, chunk));
            buf
        })
        .collect()
}

/// Simulates one perturbed input sequence and returns its agent-centric
/// cost. `traj` receives the `T` states after each step.
#[allow(clippy::too_many_arguments)]
pub fn rollout_agent(
    start: &VesselState,
    nominal: &[ControlInput],
    noise: &[[f64; 4]],
    vessel: &VesselParams,
    ctx: &AgentCostContext<'_>,
    dt: f64,
    traj: &mut [VesselState],
) -> f64 {
    let mut q = *start;
    let mut cost = 0.0;
    for t in 0..nominal.len() {
        let u = nominal[t];
        let eps = &noise[t];
        let perturbed = ControlInput(std::array::from_fn(|c| u.0[c] + eps[c]));
        q = step(&q, &perturbed, dt, vessel);
        traj[t] = q;
        cost += agent_stage_cost(&q, &u, eps, ctx);
    }
    cost
}

/// Sample indices whose agent cost does not exceed the collision penalty.
pub fn filter_colliding(costs: &[f64], c_collision: f64) -> Vec<usize> {
    costs
        .iter()
        .enumerate()
        .filter(|(_, c)| **c <= c_collision)
        .map(|(k, _)| k)
        .collect()
}

/// The `ceil(K / 20)` cheapest samples, used when nothing survives filtering.
pub fn fallback_pool(costs: &[f64]) -> Vec<usize> {
    let n = costs.len().div_ceil(20).max(1);
    let mut order: Vec<usize> = (0..costs.len()).collect();
    order.sort_by(|a, b| costs[*a].total_cmp(&costs[*b]).then(a.cmp(b)));
    order.truncate(n);
    order
}

/// Draws `k` indices uniformly with replacement from each agent's pool.
/// Returns `[agent][system sample]`.
pub fn recombine<R: Rng>(pools: &[Vec<usize>], k: usize, rngs: &mut [R]) -> Vec<Vec<usize>> {
    pools
        .iter()
        .zip(rngs.iter_mut())
        .map(|(pool, rng)| {
            assert!(!pool.is_empty(), "recombination pool must not be empty");
            (0..k).map(|_| pool[rng.random_range(0..pool.len())]).collect()
        })
        .collect()
}

/// Normalized weights `exp(-(S_k - S_min) / lambda) / eta`.
pub fn importance_weights(costs: &[f64], lambda: f64) -> Vec<f64> {
    let s_min = costs.iter().copied().fold(f64::INFINITY, f64::min);
    let mut w: Vec<f64> = costs.iter().map(|s| (-(s - s_min) / lambda).exp()).collect();
    let eta: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= eta);
    w
}

/// `U* = U + sum_k w_k eps_k`, reduced in index order, then saturated.
pub fn update_control(
    nominal: &[ControlInput],
    weights: &[f64],
    noises: &[&[[f64; 4]]],
    f_max: f64,
) -> Vec<ControlInput> {
    let mut out: Vec<ControlInput> = nominal.to_vec();
    let mut acc = vec![[0.0; 4]; nominal.len()];
    for (w, eps) in weights.iter().zip(noises) {
        for (a, e) in acc.iter_mut().zip(eps.iter()) {
            for c in 0..4 {
                a[c] += w * e[c];
            }
        }
    }
    for (u, a) in out.iter_mut().zip(&acc) {
        *u = ControlInput(std::array::from_fn(|c| u.0[c] + a[c])).clamped(f_max);
    }
    out
}

/// Input that balances drag at the current surge and sway, with no yaw
/// moment.
pub fn holding_input(state: &VesselState, vessel: &VesselParams) -> ControlInput {
    let fx = 0.5 * vessel.drag_diag[0] * state.surge;
    let fy = 0.5 * vessel.drag_diag[1] * state.sway;
    ControlInput::new(fx, fx, fy, fy).clamped(vessel.f_max)
}

/// Drops the first input and repeats the last one.
pub fn shift_hotstart(sequence: &[ControlInput]) -> Vec<ControlInput> {
    if sequence.is_empty() {
        return Vec::new();
    }
    let mut out = sequence[1..].to_vec();
    out.push(*sequence.last().unwrap());
    out
}

/// Per-agent rollouts of one planner call.
#[derive(Debug, Clone)]
pub struct AgentRollouts {
    pub id: AgentId,
    /// `K * T` noise vectors, sample-major.
    pub noise: Vec<[f64; 4]>,
    /// `K * T` states, sample-major.
    pub trajectories: Vec<VesselState>,
    pub costs: Vec<f64>,
    /// Pool the recombination draws from.
    pub pool: Vec<usize>,
    /// True when no rollout survived filtering.
    pub fallback: bool,
}

impl AgentRollouts {
    pub fn trajectory(&self, k: usize, horizon: usize) -> &[VesselState] {
        &self.trajectories[k * horizon..(k + 1) * horizon]
    }

    pub fn noise_of(&self, k: usize, horizon: usize) -> &[[f64; 4]] {
        &self.noise[k * horizon..(k + 1) * horizon]
    }

    pub fn valid_count(&self, c_collision: f64) -> usize {
        self.costs.iter().filter(|c| **c <= c_collision).count()
    }
}

/// The working set of one call.
#[derive(Debug, Clone)]
pub struct RolloutBatch {
    pub horizon: usize,
    pub agents: Vec<AgentRollouts>,
}

/// Samples noise and rolls out every agent independently.
pub fn rollout_batch(
    problem: &PlanningProblem<'_>,
    params: &PlannerParams,
    nominal: &[Vec<ControlInput>],
    call: u64,
) -> RolloutBatch {
    let t_len = params.horizon_steps;
    let k_len = params.samples;
    let agents = problem
        .agents
        .iter()
        .enumerate()
        .map(|(j, model)| {
            let ctx = AgentCostContext {
                grid: problem.grid,
                footprint: model.footprint(),
                goal: problem.goals[j],
                start: problem.states[j].position(),
                v_max: model.vessel.v_max,
                sigma_diag: params.sigma_diag,
                params: problem.costs,
            };
            if model.predicted {
                let noise = vec![[0.0; 4]; t_len];
                let mut trajectories = vec![VesselState::default(); t_len];
                let cost = rollout_agent(
                    &problem.states[j],
                    &nominal[j],
                    &noise,
                    &model.vessel,
                    &ctx,
                    params.dt,
                    &mut trajectories,
                );
                return AgentRollouts {
                    id: model.id,
                    noise,
                    trajectories,
                    costs: vec![cost],
                    pool: vec![0],
                    fallback: false,
                };
            }
            let mut noise = vec![[0.0; 4]; k_len * t_len];
            let mut trajectories = vec![VesselState::default(); k_len * t_len];
            let mut costs = vec![0.0; k_len];
            noise
                .par_chunks_mut(t_len)
                .zip(trajectories.par_chunks_mut(t_len))
                .zip(costs.par_iter_mut())
                .enumerate()
                .with_min_len(8)
                .for_each(|(k, ((eps, traj), cost))| {
                    sample_noise_sequence(params, call, model.id, k, eps);
                    *cost = rollout_agent(
                        &problem.states[j],
                        &nominal[j],
                        eps,
                        &model.vessel,
                        &ctx,
                        params.dt,
                        traj,
                    );
                });
            let valid = filter_colliding(&costs, problem.costs.c_collision);
            let fallback = valid.is_empty();
            let pool = if fallback { fallback_pool(&costs) } else { valid };
            AgentRollouts {
                id: model.id,
                noise,
                trajectories,
                costs,
                pool,
                fallback,
            }
        })
        .collect();
    RolloutBatch { horizon: t_len, agents }
}

/// Joint cost of each system sample of one interaction group: the stored
/// agent costs plus the configuration cost summed over the horizon.
pub fn system_costs(
    batch: &RolloutBatch,
    members: &[usize],
    indices: &[Vec<usize>],
    footprints: &[Footprint],
    costs: &CostParams,
) -> Vec<f64> {
    let k_len = indices[members[0]].len();
    let t_len = batch.horizon;
    (0..k_len)
        .into_par_iter()
        .with_min_len(16)
        .map(|k| {
            let mut s: f64 = members.iter().map(|&j| batch.agents[j].costs[indices[j][k]]).sum();
            if members.len() > 1 {
                for (a_pos, &a) in members.iter().enumerate() {
                    let ta = batch.agents[a].trajectory(indices[a][k], t_len);
                    for &b in &members[a_pos + 1..] {
                        let tb = batch.agents[b].trajectory(indices[b][k], t_len);
                        for t in 0..t_len {
                            s += pair_stage_cost(&ta[t], &footprints[a], &tb[t], &footprints[b], costs);
                        }
                    }
                }
            }
            s
        })
        .collect()
}

/// Splits agents into groups that can interact within the horizon, judged
/// from the bounding boxes of their candidate trajectories.
pub fn interaction_groups(batch: &RolloutBatch, starts: &[VesselState], reach: f64) -> Vec<Vec<usize>> {
    let t_len = batch.horizon;
    let boxes: Vec<[f64; 4]> = batch
        .agents
        .iter()
        .zip(starts)
        .map(|(a, s)| {
            let mut b = [s.x, s.y, s.x, s.y];
            for &k in &a.pool {
                for q in a.trajectory(k, t_len) {
                    b[0] = b[0].min(q.x);
                    b[1] = b[1].min(q.y);
                    b[2] = b[2].max(q.x);
                    b[3] = b[3].max(q.y);
                }
            }
            b
        })
        .collect();
    let n = boxes.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for a in 0..n {
        for b in (a + 1)..n {
            let (ba, bb) = (boxes[a], boxes[b]);
            let gap_x = (bb[0] - ba[2]).max(ba[0] - bb[2]);
            let gap_y = (bb[1] - ba[3]).max(ba[1] - bb[3]);
            if gap_x <= reach && gap_y <= reach {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot: HashMap<usize, usize> = HashMap::new();
    for a in 0..n {
        let r = find(&mut parent, a);
        let g = *slot.entry(r).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(a);
    }
    groups
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentDiagnostics {
    pub id: AgentId,
    /// Rollouts that survived static-collision filtering.
    pub valid_samples: usize,
    pub fallback: bool,
    /// Minimum joint cost of the agent's interaction group.
    pub min_cost: f64,
    /// `1 / sum w^2` of the group's weights.
    pub effective_sample_size: f64,
    pub group_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanDiagnostics {
    pub agents: Vec<AgentDiagnostics>,
    /// System samples referencing only statically collision-free rollouts.
    pub clean_system_samples: usize,
    #[serde(skip)]
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone)]
pub struct PlanResult {
    /// First input of every agent's updated sequence.
    pub commands: Vec<ControlInput>,
    pub sequences: Vec<Vec<ControlInput>>,
    /// Deterministic rollout of each updated sequence.
    pub trajectories: Vec<Vec<VesselState>>,
    pub diagnostics: PlanDiagnostics,
}

/// Stateful MPPI planner. Holds the hot-start sequences of every agent it
/// has planned for and counts its calls to key the noise streams.
#[derive(Debug, Clone)]
pub struct MppiPlanner {
    params: PlannerParams,
    hot_start: HashMap<AgentId, Vec<ControlInput>>,
    calls: u64,
}

impl MppiPlanner {
    pub fn new(params: PlannerParams) -> Self {
        Self {
            params,
            hot_start: HashMap::new(),
            calls: 0,
        }
    }

    pub fn params(&self) -> &PlannerParams {
        &self.params
    }

    pub fn calls(&self) -> u64 {
        self.calls
    }

    /// Nominal sequence for an agent, zero if never planned.
    pub fn nominal(&self, id: AgentId) -> Vec<ControlInput> {
        self.hot_start
            .get(&id)
            .cloned()
            .unwrap_or_else(|| vec![ControlInput::ZERO; self.params.horizon_steps])
    }

    pub fn set_nominal(&mut self, id: AgentId, sequence: Vec<ControlInput>) {
        assert_eq!(sequence.len(), self.params.horizon_steps);
        self.hot_start.insert(id, sequence);
    }

    /// Runs one full two-stage MPPI iteration over the local system and
    /// stores the shifted solution as the next hot start.
    pub fn plan(&mut self, problem: &PlanningProblem<'_>) -> PlanResult {
        let started = Instant::now();
        let n = problem.agents.len();
        assert!(n > 0, "planning needs at least one agent");
        assert_eq!(problem.states.len(), n);
        assert_eq!(problem.goals.len(), n);
        let params = self.params;
        let call = self.calls;
        self.calls += 1;
        let t_len = params.horizon_steps;
        let k_len = params.samples;

        let nominal: Vec<Vec<ControlInput>> = problem
            .agents
            .iter()
            .zip(problem.states)
            .map(|(a, q)| match a.predicted {
                true => vec![holding_input(q, &a.vessel); t_len],
                false => self.nominal(a.id),
            })
            .collect();
        let batch = rollout_batch(problem, &params, &nominal, call);

        let mut rngs: Vec<ChaCha8Rng> = problem
            .agents
            .iter()
            .map(|a| stream_rng(&[params.seed, STREAM_RECOMBINE, call, a.id as u64]))
            .collect();
        let pools: Vec<Vec<usize>> = batch.agents.iter().map(|a| a.pool.clone()).collect();
        let indices = recombine(&pools, k_len, &mut rngs);

        let footprints: Vec<Footprint> = problem.agents.iter().map(|a| a.footprint()).collect();
        let max_circ = footprints.iter().map(|f| f.circumradius()).fold(0.0, f64::max);
        let reach = problem.costs.regulation_radius.max(2.0 * max_circ);
        let groups = interaction_groups(&batch, problem.states, reach);

        let mut sequences = vec![Vec::new(); n];
        let mut agent_diag: Vec<Option<AgentDiagnostics>> = vec![None; n];
        for members in &groups {
            let s = system_costs(&batch, members, &indices, &footprints, problem.costs);
            let w = importance_weights(&s, params.lambda);
            let s_min = s.iter().copied().fold(f64::INFINITY, f64::min);
            let ess = 1.0 / w.iter().map(|x| x * x).sum::<f64>();
            for &j in members {
                let ag = &batch.agents[j];
                let noises: Vec<&[[f64; 4]]> = indices[j].iter().map(|&k| ag.noise_of(k, t_len)).collect();
                sequences[j] = update_control(&nominal[j], &w, &noises, problem.agents[j].vessel.f_max);
                agent_diag[j] = Some(AgentDiagnostics {
                    id: ag.id,
                    valid_samples: ag.valid_count(problem.costs.c_collision),
                    fallback: ag.fallback,
                    min_cost: s_min,
                    effective_sample_size: ess,
                    group_size: members.len(),
                });
            }
        }

        let clean_system_samples = (0..k_len)
            .filter(|&k| {
                batch
                    .agents
                    .iter()
                    .enumerate()
                    .all(|(j, a)| a.costs[indices[j][k]] <= problem.costs.c_collision)
            })
            .count();

        let trajectories: Vec<Vec<VesselState>> = (0..n)
            .map(|j| {
                let v = &problem.agents[j].vessel;
                let mut q = problem.states[j];
                sequences[j]
                    .iter()
                    .map(|u| {
                        q = step(&q, u, params.dt, v);
                        q
                    })
                    .collect()
            })
            .collect();

        for (a, seq) in problem.agents.iter().zip(&sequences).filter(|(a, _)| !a.predicted) {
            self.hot_start.insert(a.id, shift_hotstart(seq));
        }

        PlanResult {
            commands: sequences.iter().map(|s| s[0]).collect(),
            sequences,
            trajectories,
            diagnostics: PlanDiagnostics {
                agents: agent_diag
                    .into_iter()
                    .map(|d| d.expect("every agent is in a group"))
                    .collect(),
                clean_system_samples,
                wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
            },
        }
    }
}
