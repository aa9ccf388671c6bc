//! Streams a recorded episode through a sink at wall-clock pace.

use std::time::{Duration, Instant};

use canal_core::engine::{AgentInfo, AgentSnapshot, EpisodeInfo, EpisodeLog, FrameSink, TickSnapshot};

pub fn episode_info(log: &EpisodeLog) -> EpisodeInfo {
    EpisodeInfo {
        map: log.map.clone(),
        map_hash: log.map_hash.clone(),
        mode: log.mode,
        seed: log.seed,
        control_period_s: log.control_period_s,
        agents: log
            .agents
            .iter()
            .map(|a| AgentInfo {
                id: a.id,
                controller: a.controller,
                length_m: a.length_m,
                width_m: a.width_m,
                goal: a.goal,
            })
            .collect(),
    }
}

/// Snapshots of every logged tick. Planned trajectories are not logged and
/// come out empty.
pub fn snapshots(log: &EpisodeLog) -> Vec<TickSnapshot> {
    log.ticks
        .iter()
        .map(|t| TickSnapshot {
            tick: t.tick,
            time_s: t.time_s,
            agents: log
                .agents
                .iter()
                .enumerate()
                .map(|(i, a)| AgentSnapshot {
                    id: a.id,
                    controller: a.controller,
                    state: t.states[i],
                    input: t.inputs[i],
                    local_goal: t.local_goals[i],
                    planned: Vec::new(),
                })
                .collect(),
            violations: t.violations.clone(),
            collision: t.collision,
        })
        .collect()
}

/// Publishes every tick, sleeping one control period divided by `rate`
/// between ticks. A non-positive or infinite rate streams without pauses.
pub fn replay(log: &EpisodeLog, sink: &dyn FrameSink, rate: f64) {
    sink.begin(&episode_info(log));
    let period = if rate > 0.0 && rate.is_finite() {
        Some(Duration::from_secs_f64(log.control_period_s / rate))
    } else {
        None
    };
    let start = Instant::now();
    for (k, snap) in snapshots(log).iter().enumerate() {
        if let Some(p) = period {
            let due = start + p * k as u32;
            let now = Instant::now();
            if due > now {
                std::thread::sleep(due - now);
            }
        }
        sink.publish(snap);
    }
    sink.end();
}
