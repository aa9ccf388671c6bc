use std::f64::consts::PI;

use approx::assert_abs_diff_eq;
use canal_core::costs::AgentCostContext;
use canal_core::planner::{
    fallback_pool, filter_colliding, importance_weights, recombine, rollout_agent, rollout_batch, sample_noise,
    shift_hotstart, stream_rng, system_costs, update_control, AgentRollouts, RolloutBatch,
};
use canal_core::{
    AgentModel, ControlInput, CostParams, Footprint, MppiPlanner, OccupancyGrid, PlannerParams, PlanningProblem, Point,
    VesselParams, VesselState,
};
use proptest::prelude::*;

fn vessel() -> VesselParams {
    VesselParams::default()
}

fn open_water(size: f64) -> OccupancyGrid {
    let n = (size / 0.5) as usize;
    OccupancyGrid::empty(n, n, 0.5, Point::new(-size / 2.0, -size / 2.0)).unwrap()
}

fn small_params(samples: usize, horizon: usize) -> PlannerParams {
    PlannerParams {
        samples,
        horizon_steps: horizon,
        seed: 11,
        ..PlannerParams::default()
    }
}

fn ctx<'a>(grid: &'a OccupancyGrid, costs: &'a CostParams, goal: Point, start: Point) -> AgentCostContext<'a> {
    AgentCostContext {
        grid,
        footprint: Footprint::new(4.0, 1.8),
        goal,
        start,
        v_max: 1.7,
        sigma_diag: PlannerParams::default().sigma_diag,
        params: costs,
    }
}

#[test]
fn rollout_examples() {
    let grid = open_water(100.0);
    let costs = CostParams::default();
    let t = 100;
    let nominal = vec![ControlInput::ZERO; t];
    let noise = vec![[0.0; 4]; t];
    let mut traj = vec![VesselState::default(); t];
    let start = VesselState::at_rest(0.0, 0.0, 0.0);

    let s = rollout_agent(
        &start,
        &nominal,
        &noise,
        &vessel(),
        &ctx(&grid, &costs, Point::new(0.0, 0.0), Point::new(0.0, 0.0)),
        0.1,
        &mut traj,
    );
    assert_eq!(s, 0.0);

    let s = rollout_agent(
        &start,
        &nominal,
        &noise,
        &vessel(),
        &ctx(&grid, &costs, Point::new(15.0, 0.0), Point::new(0.0, 0.0)),
        0.1,
        &mut traj,
    );
    assert_abs_diff_eq!(s, 350.0, epsilon = 1e-9);

    let walled = OccupancyGrid::from_fn(200, 200, 0.5, Point::new(-50.0, -50.0), |p| p.x > 1.0).unwrap();
    let s = rollout_agent(
        &start,
        &nominal,
        &noise,
        &vessel(),
        &ctx(&walled, &costs, Point::new(0.0, 0.0), Point::new(0.0, 0.0)),
        0.1,
        &mut traj,
    );
    assert!(s >= t as f64 * costs.c_collision);
    assert!(filter_colliding(&[s], costs.c_collision).is_empty());
}

#[test]
fn noise_is_deterministic() {
    let p = small_params(50, 20);
    assert_eq!(sample_noise(&p, &[0, 3], 4), sample_noise(&p, &[0, 3], 4));
    assert_ne!(sample_noise(&p, &[0], 4), sample_noise(&p, &[0], 5));
}

#[test]
fn noise_moments_over_a_million_draws() {
    let p = small_params(1000, 1000);
    let noise = &sample_noise(&p, &[2], 0)[0];
    let n = noise.len() as f64;
    assert_eq!(noise.len(), 1_000_000);
    for c in 0..4 {
        let var_target = p.nu * p.sigma_diag[c];
        let mean = noise.iter().map(|e| e[c]).sum::<f64>() / n;
        let var = noise.iter().map(|e| (e[c] - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(
            mean.abs() <= 5.0 * var_target.sqrt() / n.sqrt(),
            "channel {c} mean {mean}"
        );
        assert!(
            (var / var_target - 1.0).abs() <= 0.02,
            "channel {c} var {var} vs {var_target}"
        );
    }
}

#[test]
fn filter_examples() {
    assert_eq!(filter_colliding(&[0.0; 5], 2000.0), vec![0, 1, 2, 3, 4]);
    assert!(filter_colliding(&[4000.0; 5], 2000.0).is_empty());
    assert_eq!(filter_colliding(&[100.0, 2001.0, 2000.0], 2000.0), vec![0, 2]);
}

#[test]
fn recombine_single_valid_is_forced() {
    let mut rngs = vec![stream_rng(&[1]), stream_rng(&[2])];
    let idx = recombine(&[vec![7], vec![3]], 500, &mut rngs);
    assert!(idx[0].iter().all(|&k| k == 7));
    assert!(idx[1].iter().all(|&k| k == 3));
}

#[test]
fn recombine_is_uniform() {
    let k = 100;
    let draws = 1_000_000;
    let pool: Vec<usize> = (0..k).collect();
    let mut rngs = vec![stream_rng(&[42, 7])];
    let idx = recombine(&[pool], draws, &mut rngs);
    let mut counts = vec![0usize; k];
    for &i in &idx[0] {
        counts[i] += 1;
    }
    let expected = draws as f64 / k as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 99 degrees of freedom, upper 0.1% point
    assert!(chi2 < 148.23, "chi-square {chi2}");
}

#[test]
fn fallback_is_cheapest_twentieth() {
    let k = 60;
    let costs: Vec<f64> = (0..k)
        .map(|i| 5.0 + ((i * 37) % k) as f64 - 0.5 * (i % 3) as f64)
        .collect();
    let mut oracle: Vec<usize> = (0..k).collect();
    oracle.sort_by(|a, b| costs[*a].partial_cmp(&costs[*b]).unwrap());
    oracle.truncate(3);
    let mut got = fallback_pool(&costs);
    got.sort();
    oracle.sort();
    assert_eq!(got, oracle);

    let descending: Vec<f64> = (0..41).map(|i| 41.0 - i as f64).collect();
    let mut got = fallback_pool(&descending);
    got.sort();
    assert_eq!(got, vec![38, 39, 40]);
}

fn stationary_batch(trajs: Vec<Vec<VesselState>>, costs: Vec<f64>) -> RolloutBatch {
    let horizon = trajs[0].len();
    RolloutBatch {
        horizon,
        agents: trajs
            .into_iter()
            .zip(costs)
            .enumerate()
            .map(|(j, (t, c))| AgentRollouts {
                id: j as u32,
                noise: vec![[0.0; 4]; horizon],
                trajectories: t,
                costs: vec![c],
                pool: vec![0],
                fallback: false,
            })
            .collect(),
    }
}

#[test]
fn system_cost_examples() {
    let costs = CostParams::default();
    let fp = vec![Footprint::new(4.0, 1.8); 2];
    let here = VesselState::at_rest(0.0, 0.0, 0.0);
    let far = VesselState::at_rest(50.0, 0.0, 0.0);
    let near = VesselState::at_rest(1.0, 0.0, 0.0);

    let alone = stationary_batch(vec![vec![here; 5]], vec![12.5]);
    assert_eq!(system_costs(&alone, &[0], &[vec![0]], &fp, &costs), vec![12.5]);

    let apart = stationary_batch(vec![vec![here; 5], vec![far; 5]], vec![1.0, 2.0]);
    assert_eq!(
        system_costs(&apart, &[0, 1], &[vec![0], vec![0]], &fp, &costs),
        vec![3.0]
    );

    let touching = stationary_batch(vec![vec![here; 5], vec![far, near, near, near, far]], vec![1.0, 2.0]);
    assert_eq!(
        system_costs(&touching, &[0, 1], &[vec![0], vec![0]], &fp, &costs),
        vec![3.0 + 3.0 * costs.c_collision]
    );
}

#[test]
fn weight_examples() {
    assert_eq!(importance_weights(&[10.0, 10.0], 15.0), vec![0.5, 0.5]);
    let w = importance_weights(&[0.0, 15.0 * 2f64.ln()], 15.0);
    assert_abs_diff_eq!(w[0], 2.0 / 3.0, epsilon = 1e-9);
    assert_abs_diff_eq!(w[1], 1.0 / 3.0, epsilon = 1e-9);
    assert_eq!(importance_weights(&[123.0], 15.0), vec![1.0]);
}

#[test]
fn temperature_limits() {
    let s = [3.0, 1.0, 7.0, 2.0];
    let hot = importance_weights(&s, 1e6);
    assert!(hot.iter().all(|w| (w - 0.25).abs() < 1e-5));
    let cold = importance_weights(&s, 1e-6);
    assert_abs_diff_eq!(cold[1], 1.0, epsilon = 1e-12);
}

#[test]
fn update_examples() {
    let nominal = vec![ControlInput::new(1.0, 1.0, 0.0, 0.0); 2];
    let a = [[0.5, -0.5, 0.1, 0.0], [0.0, 0.2, 0.0, 0.0]];
    let b = [[-0.5, 0.5, -0.1, 0.0], [0.0, -0.2, 0.0, 0.0]];

    let u = update_control(&nominal, &[1.0, 0.0], &[&a, &b], 5.0);
    assert_eq!(u[0], ControlInput::new(1.5, 0.5, 0.1, 0.0));

    let u = update_control(&nominal, &[0.5, 0.5], &[&a, &b], 5.0);
    assert_eq!(u, nominal);

    let plus = [[3.0, 0.0, 0.0, 0.0]];
    let minus = [[-3.0, 0.0, 0.0, 0.0]];
    let u = update_control(&[ControlInput::ZERO], &[2.0 / 3.0, 1.0 / 3.0], &[&plus, &minus], 5.0);
    assert_abs_diff_eq!(u[0].0[0], 1.0, epsilon = 1e-12);
}

#[test]
fn hotstart_examples() {
    let (a, b, c) = (
        ControlInput::new(1.0, 0.0, 0.0, 0.0),
        ControlInput::new(2.0, 0.0, 0.0, 0.0),
        ControlInput::new(3.0, 0.0, 0.0, 0.0),
    );
    assert_eq!(shift_hotstart(&[a, a, a]), vec![a, a, a]);
    assert_eq!(shift_hotstart(&[a, b, c]), vec![b, c, c]);
    assert_eq!(shift_hotstart(&shift_hotstart(&[a, b, c])), vec![c, c, c]);
}

#[test]
fn plan_at_goal_stays_put() {
    let grid = open_water(100.0);
    let costs = CostParams::default();
    let agents = [AgentModel::planned(0, vessel())];
    let states = [VesselState::at_rest(0.0, 0.0, 0.0)];
    let goals = [Point::new(0.0, 0.0)];
    let mut planner = MppiPlanner::new(PlannerParams::default());
    let r = planner.plan(&PlanningProblem {
        agents: &agents,
        states: &states,
        goals: &goals,
        grid: &grid,
        costs: &costs,
    });
    let std = PlannerParams::default().noise_std();
    assert!(r.commands[0].norm() <= std[0], "{:?}", r.commands[0]);
    assert!(r.trajectories[0].iter().all(|q| q.position().norm() < 1.0));
}

fn two_far_apart() -> (Vec<AgentModel>, Vec<VesselState>, Vec<Point>) {
    (
        vec![AgentModel::planned(0, vessel()), AgentModel::planned(1, vessel())],
        vec![
            VesselState::at_rest(-60.0, -60.0, 0.0),
            VesselState::at_rest(60.0, 60.0, PI),
        ],
        vec![Point::new(-45.0, -60.0), Point::new(45.0, 60.0)],
    )
}

#[test]
fn far_agents_decouple() {
    let grid = open_water(160.0);
    let costs = CostParams::default();
    let params = small_params(200, 30);
    let (agents, states, goals) = two_far_apart();
    let joint = MppiPlanner::new(params).plan(&PlanningProblem {
        agents: &agents,
        states: &states,
        goals: &goals,
        grid: &grid,
        costs: &costs,
    });
    assert_eq!(joint.diagnostics.agents[0].group_size, 1);
    for j in 0..2 {
        let alone = MppiPlanner::new(params).plan(&PlanningProblem {
            agents: &agents[j..j + 1],
            states: &states[j..j + 1],
            goals: &goals[j..j + 1],
            grid: &grid,
            costs: &costs,
        });
        assert_eq!(alone.sequences[0], joint.sequences[j]);
    }
}

fn encounter_plan(threads: usize) -> Vec<Vec<ControlInput>> {
    let grid = open_water(60.0);
    let costs = CostParams::default();
    let agents = [AgentModel::planned(0, vessel()), AgentModel::planned(1, vessel())];
    let states = [
        VesselState::at_rest(-8.0, 0.5, 0.0),
        VesselState::at_rest(8.0, -0.5, PI),
    ];
    let goals = [Point::new(7.0, 0.0), Point::new(-7.0, 0.0)];
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| {
        let mut planner = MppiPlanner::new(small_params(300, 40));
        let problem = PlanningProblem {
            agents: &agents,
            states: &states,
            goals: &goals,
            grid: &grid,
            costs: &costs,
        };
        planner.plan(&problem);
        planner.plan(&problem).sequences
    })
}

#[test]
fn plan_is_thread_count_independent() {
    let one = encounter_plan(1);
    for n in [2, 8] {
        let other = encounter_plan(n);
        for (a, b) in one.iter().flatten().zip(other.iter().flatten()) {
            for c in 0..4 {
                assert_eq!(a.0[c].to_bits(), b.0[c].to_bits());
            }
        }
    }
}

#[test]
fn recombined_samples_avoid_static_collisions() {
    // a wall just ahead of agent 0 makes part of its rollouts collide
    let grid = OccupancyGrid::from_fn(240, 120, 0.25, Point::new(-30.0, -15.0), |p| {
        p.x > 5.5 && p.y.abs() < 6.0
    })
    .unwrap();
    let costs = CostParams::default();
    let params = small_params(400, 40);
    let agents = [AgentModel::planned(0, vessel()), AgentModel::planned(1, vessel())];
    let states = [
        VesselState {
            surge: 1.5,
            ..VesselState::at_rest(0.0, 0.0, 0.0)
        },
        VesselState::at_rest(-10.0, 8.0, 0.0),
    ];
    let goals = [Point::new(15.0, 0.0), Point::new(5.0, 8.0)];
    let problem = PlanningProblem {
        agents: &agents,
        states: &states,
        goals: &goals,
        grid: &grid,
        costs: &costs,
    };
    let nominal = vec![vec![ControlInput::ZERO; 40]; 2];
    let batch = rollout_batch(&problem, &params, &nominal, 0);
    let colliding = batch.agents[0].costs.iter().filter(|c| **c > costs.c_collision).count();
    assert!(colliding > 0 && colliding < params.samples, "{colliding}");
    assert!(!batch.agents[0].fallback);

    let pools: Vec<Vec<usize>> = batch.agents.iter().map(|a| a.pool.clone()).collect();
    let mut rngs = vec![stream_rng(&[1]), stream_rng(&[2])];
    let idx = recombine(&pools, params.samples, &mut rngs);
    for (j, a) in batch.agents.iter().enumerate() {
        assert!(idx[j].iter().all(|&k| a.costs[k] <= costs.c_collision));
    }

    let r = MppiPlanner::new(params).plan(&problem);
    assert_eq!(r.diagnostics.clean_system_samples, params.samples);
}

#[test]
fn fallback_still_returns_a_finite_plan() {
    let grid = OccupancyGrid::from_fn(80, 80, 0.25, Point::new(-10.0, -10.0), |p| p.x > 0.5).unwrap();
    let costs = CostParams::default();
    let agents = [AgentModel::planned(0, vessel())];
    let states = [VesselState::at_rest(0.0, 0.0, 0.0)];
    let goals = [Point::new(-5.0, 0.0)];
    let r = MppiPlanner::new(small_params(100, 20)).plan(&PlanningProblem {
        agents: &agents,
        states: &states,
        goals: &goals,
        grid: &grid,
        costs: &costs,
    });
    assert!(r.diagnostics.agents[0].fallback);
    assert_eq!(r.diagnostics.clean_system_samples, 0);
    assert!(r.commands[0]
        .0
        .iter()
        .all(|f| f.is_finite() && f.abs() <= vessel().f_max));
}

#[test]
fn predicted_agents_hold_their_velocity() {
    let grid = open_water(100.0);
    let costs = CostParams::default();
    let agents = [AgentModel::planned(0, vessel()), AgentModel::predicted(1, vessel())];
    let states = [
        VesselState::at_rest(-10.0, 0.0, 0.0),
        VesselState {
            surge: 1.0,
            sway: 0.2,
            ..VesselState::at_rest(10.0, 5.0, PI)
        },
    ];
    let goals = [Point::new(5.0, 0.0), Point::new(0.0, 5.0)];
    let r = MppiPlanner::new(small_params(100, 30)).plan(&PlanningProblem {
        agents: &agents,
        states: &states,
        goals: &goals,
        grid: &grid,
        costs: &costs,
    });
    let v = vessel();
    let hold = ControlInput::new(
        0.5 * v.drag_diag[0],
        0.5 * v.drag_diag[0],
        0.1 * v.drag_diag[1],
        0.1 * v.drag_diag[1],
    );
    assert!(r.sequences[1].iter().all(|u| *u == hold));
    for q in &r.trajectories[1] {
        assert_abs_diff_eq!(q.surge, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(q.sway, 0.2, epsilon = 1e-12);
    }
}

proptest! {
    #[test]
    fn weights_normalize_and_translate(s in prop::collection::vec(0.0f64..200.0, 1..64), shift in -1e3f64..1e3, lambda in 0.5f64..100.0) {
        let w = importance_weights(&s, lambda);
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(w.iter().all(|x| *x > 0.0));
        let shifted: Vec<f64> = s.iter().map(|c| c + shift).collect();
        let w2 = importance_weights(&shifted, lambda);
        for (a, b) in w.iter().zip(&w2) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn weights_are_monotone(s in prop::collection::vec(0.0f64..200.0, 2..64), lambda in 1.0f64..100.0) {
        let w = importance_weights(&s, lambda);
        for a in 0..s.len() {
            for b in 0..s.len() {
                if s[b] - s[a] > 1e-9 * lambda {
                    prop_assert!(w[a] > w[b]);
                }
            }
        }
        let argmin = (0..s.len()).min_by(|a, b| s[*a].total_cmp(&s[*b])).unwrap();
        prop_assert!(w.iter().all(|x| *x <= w[argmin]));
    }

    #[test]
    fn updates_stay_within_thrust_limits(
        noise in prop::collection::vec(prop::array::uniform4(-20.0f64..20.0), 8),
        raw in prop::collection::vec(0.0f64..1.0, 4),
    ) {
        let total: f64 = raw.iter().sum::<f64>() + 1e-9;
        let w: Vec<f64> = raw.iter().map(|r| (r + 1e-9 / 4.0) / total).collect();
        let noises: Vec<&[[f64; 4]]> = noise.chunks(2).collect();
        let u = update_control(&[ControlInput::new(4.0, -4.0, 1.0, 0.0); 2], &w, &noises, 5.0);
        prop_assert!(u.iter().all(|x| x.0.iter().all(|f| f.abs() <= 5.0)));
    }
}
