use canal_bridge::replay::snapshots;
use canal_bridge::{ClientMessage, Frame, FrameAgent, MapRaster, ServerMessage, SCHEMA_VERSION};
use canal_core::engine::{ControllerKind, MapSource, ScriptedPolicy, TeleopCommand};
use canal_core::{OccupancyGrid, Point};
use proptest::prelude::*;

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![any::<f64>().prop_filter("finite", |x| x.is_finite()), -1e3..1e3f64]
}

fn controller() -> impl Strategy<Value = ControllerKind> {
    prop_oneof![
        Just(ControllerKind::Mppi),
        Just(ControllerKind::Teleop),
        Just(ControllerKind::Scripted(ScriptedPolicy::ConstantVelocity)),
        Just(ControllerKind::Scripted(ScriptedPolicy::HoldPosition)),
        Just(ControllerKind::Scripted(ScriptedPolicy::WrongSideAvoider)),
    ]
}

fn agent() -> impl Strategy<Value = FrameAgent> {
    (
        any::<u32>(),
        controller(),
        prop::array::uniform6(finite()),
        prop::array::uniform4(finite()),
        prop::array::uniform2(finite()),
        prop::collection::vec(prop::array::uniform2(finite()), 0..20),
    )
        .prop_map(|(id, controller, s, input_n, local_goal, planned)| FrameAgent {
            id,
            controller,
            x_m: s[0],
            y_m: s[1],
            heading_rad: s[2],
            surge_mps: s[3],
            sway_mps: s[4],
            yaw_rate_radps: s[5],
            input_n,
            local_goal,
            planned,
        })
}

fn frame() -> impl Strategy<Value = Frame> {
    (
        any::<u64>(),
        finite(),
        prop::collection::vec(agent(), 0..5),
        prop::collection::vec(any::<[u32; 2]>(), 0..4),
        any::<bool>(),
        "[0-9a-f]{64}",
    )
        .prop_map(|(tick, time_s, agents, violations, collision, map_hash)| Frame {
            schema_version: SCHEMA_VERSION,
            tick,
            time_s,
            map: MapSource::StraightCanal {
                length_m: 100.0,
                width_m: 20.0,
                resolution_m: 0.25,
            },
            map_hash,
            agents,
            violations,
            collision,
        })
}

proptest! {
    #[test]
    fn frames_round_trip_losslessly(f in frame()) {
        let text = ServerMessage::Frame(f.clone()).to_json();
        let back: ServerMessage = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back, ServerMessage::Frame(f));
    }

    #[test]
    fn teleop_commands_round_trip(agent_id in any::<u32>(), surge in finite(), yaw in finite(), t in finite()) {
        let m = ClientMessage::Teleop(TeleopCommand { agent_id, surge, yaw, client_time_ms: t });
        let back: ClientMessage = serde_json::from_str(&m.to_json()).unwrap();
        prop_assert_eq!(back, m);
    }

    #[test]
    fn raster_runs_reconstruct_cells(w in 1usize..30, h in 1usize..30, bits in prop::collection::vec(any::<bool>(), 900)) {
        let cells: Vec<bool> = bits[..w * h].to_vec();
        let grid = OccupancyGrid::new(w, h, 0.5, Point::new(-1.0, 2.0), cells.clone()).unwrap();
        let r = MapRaster::from_grid(&grid);
        prop_assert_eq!(r.runs.iter().sum::<usize>(), w * h);
        prop_assert!(r.runs.iter().skip(1).all(|&n| n > 0));
        prop_assert_eq!(r.cells(), cells);
    }
}

#[test]
fn frame_carries_schema_version_field() {
    let v: serde_json::Value = serde_json::from_str(
        &ServerMessage::Frame(Frame {
            schema_version: SCHEMA_VERSION,
            tick: 0,
            time_s: 0.0,
            map: MapSource::OpenWater {
                width_m: 1.0,
                height_m: 1.0,
                resolution_m: 1.0,
            },
            map_hash: String::new(),
            agents: vec![],
            violations: vec![],
            collision: false,
        })
        .to_json(),
    )
    .unwrap();
    assert_eq!(v["type"], "frame");
    assert_eq!(v["schema_version"], SCHEMA_VERSION);
}

#[test]
fn replay_snapshots_follow_the_log() {
    let mut sc = canal_core::engine::ScenarioConfig::new(
        MapSource::OpenWater {
            width_m: 40.0,
            height_m: 20.0,
            resolution_m: 0.5,
        },
        vec![canal_core::engine::AgentSpec::new(
            4,
            ControllerKind::Scripted(ScriptedPolicy::ConstantVelocity),
            canal_core::engine::Pose {
                x_m: 5.0,
                y_m: 10.0,
                heading_rad: 0.0,
            },
            Some(Point::new(30.0, 10.0)),
        )],
    );
    sc.max_time_s = 3.0;
    let (_, log) = canal_core::run_episode(&sc, 1).unwrap();
    let snaps = snapshots(&log);
    assert_eq!(snaps.len(), log.ticks.len());
    for (s, t) in snaps.iter().zip(&log.ticks) {
        assert_eq!(s.tick, t.tick);
        assert_eq!(s.agents[0].id, 4);
        assert_eq!(s.agents[0].state, t.states[0]);
        assert_eq!(s.agents[0].input, t.inputs[0]);
    }
}
