mod common;

use std::time::{Duration, Instant};

use canal_bridge::{Bridge, ClientMessage, ErrorCode, ServerMessage, SCHEMA_VERSION};
use canal_core::engine::{ControllerKind, ScriptedPolicy, Simulation, TeleopCommand, TickSnapshot};
use canal_core::ControlInput;

use common::*;

fn teleop(agent_id: u32, surge: f64, yaw: f64) -> ClientMessage {
    ClientMessage::Teleop(TeleopCommand {
        agent_id,
        surge,
        yaw,
        client_time_ms: 0.0,
    })
}

fn empty_snapshot(tick: u64) -> TickSnapshot {
    TickSnapshot {
        tick,
        time_s: tick as f64 * 0.1,
        agents: Vec::new(),
        violations: Vec::new(),
        collision: false,
    }
}

/// Every frame tick received until `quiet` of silence.
fn drain_ticks(ws: &mut Ws, quiet: Duration) -> Vec<u64> {
    let mut ticks = Vec::new();
    while let Some(text) = recv_raw(ws, quiet) {
        if let ServerMessage::Frame(f) = serde_json::from_str(&text).unwrap() {
            ticks.push(f.tick);
        }
    }
    ticks
}

#[test]
fn publishing_without_clients_is_a_noop() {
    let bridge = Bridge::bind("127.0.0.1:0").unwrap();
    let sink = bridge.sink();
    let sim = Simulation::new(&scripted_scenario(ControllerKind::Teleop), 0).unwrap();
    sink.begin(&sim.info());
    for t in 0..100 {
        sink.publish(&empty_snapshot(t));
    }
    sink.end();
    assert_eq!(bridge.client_count(), 0);
}

#[test]
fn schema_mismatch_is_refused_at_handshake() {
    let bridge = Bridge::bind("127.0.0.1:0").unwrap();
    let mut ws = connect(bridge.local_addr());
    send(
        &mut ws,
        &ClientMessage::Hello {
            schema_version: SCHEMA_VERSION + 1,
            client: "future".into(),
        },
    );
    match recv(&mut ws) {
        ServerMessage::Error { code, .. } => assert_eq!(code, ErrorCode::SchemaMismatch),
        m => panic!("expected error, got {m:?}"),
    }
    assert!(
        recv_raw(&mut ws, Duration::from_millis(300)).is_none(),
        "connection should close"
    );
    assert_eq!(bridge.client_count(), 0);
}

#[test]
fn first_message_must_be_hello() {
    let bridge = Bridge::bind("127.0.0.1:0").unwrap();
    let mut ws = connect(bridge.local_addr());
    send(&mut ws, &teleop(0, 1.0, 0.0));
    match recv(&mut ws) {
        ServerMessage::Error { code, .. } => assert_eq!(code, ErrorCode::HandshakeRequired),
        m => panic!("expected error, got {m:?}"),
    }
    let mut ws = connect(bridge.local_addr());
    send_raw(&mut ws, "not json");
    match recv(&mut ws) {
        ServerMessage::Error { code, .. } => assert_eq!(code, ErrorCode::Malformed),
        m => panic!("expected error, got {m:?}"),
    }
}

#[test]
fn malformed_message_after_handshake_gets_error_and_keeps_connection() {
    let bridge = Bridge::bind("127.0.0.1:0").unwrap();
    let mut ws = connect(bridge.local_addr());
    assert!(matches!(hello(&mut ws), ServerMessage::Welcome { .. }));
    send_raw(&mut ws, r#"{"type":"teleop","agent_id":"x"}"#);
    assert!(matches!(
        recv(&mut ws),
        ServerMessage::Error {
            code: ErrorCode::Malformed,
            ..
        }
    ));
    send(&mut ws, &teleop(0, 0.0, 0.0));
    assert!(matches!(
        recv(&mut ws),
        ServerMessage::Error {
            code: ErrorCode::UnknownAgent,
            ..
        }
    ));
}

#[test]
fn frames_arrive_in_increasing_order_with_constant_map_hash() {
    let bridge = Bridge::bind("127.0.0.1:0").unwrap();
    let mut ws = connect(bridge.local_addr());
    assert!(matches!(hello(&mut ws), ServerMessage::Welcome { episode: None, .. }));
    wait_clients(&bridge, 1);

    let mut sim = Simulation::new(
        &scripted_scenario(ControllerKind::Scripted(ScriptedPolicy::ConstantVelocity)),
        3,
    )
    .unwrap();
    sim.attach_sink(bridge.sink());
    let hash = sim.info().map_hash;
    for _ in 0..10 {
        sim.step(None);
        std::thread::sleep(Duration::from_millis(15));
    }

    let mut ticks = Vec::new();
    let mut saw_episode = false;
    while let Some(text) = recv_raw(&mut ws, Duration::from_millis(200)) {
        match serde_json::from_str(&text).unwrap() {
            ServerMessage::Episode { episode, map_raster } => {
                assert!(ticks.is_empty());
                assert_eq!(episode.map_hash, hash);
                assert_eq!(map_raster.unwrap().cells(), sim.grid().cells());
                saw_episode = true;
            }
            ServerMessage::Frame(f) => {
                assert_eq!(f.map_hash, hash);
                assert_eq!(f.schema_version, SCHEMA_VERSION);
                assert_eq!(f.agents.len(), 2);
                ticks.push(f.tick);
            }
            m => panic!("unexpected {m:?}"),
        }
    }
    assert!(saw_episode);
    assert!(ticks.windows(2).all(|w| w[0] < w[1]), "{ticks:?}");
    assert_eq!(ticks.last(), Some(&9));
}

#[test]
fn stalled_client_gets_latest_frame_only() {
    let bridge = Bridge::bind("127.0.0.1:0").unwrap();
    let sink = bridge.sink();
    let sim = Simulation::new(&scripted_scenario(ControllerKind::Teleop), 0).unwrap();
    sink.begin(&sim.info());
    let mut ws = connect(bridge.local_addr());
    hello(&mut ws);
    wait_clients(&bridge, 1);

    // The client does not read while frames are produced much faster than
    // the server loop can send them. Publishing must never block.
    let started = Instant::now();
    let n = 2000;
    for t in 0..n {
        sink.publish(&empty_snapshot(t));
    }
    assert!(started.elapsed() < Duration::from_secs(2));
    std::thread::sleep(Duration::from_millis(100));

    let ticks = drain_ticks(&mut ws, Duration::from_millis(200));
    assert!(ticks.windows(2).all(|w| w[0] < w[1]), "reordered: {ticks:?}");
    assert_eq!(ticks.last(), Some(&(n - 1)), "newest frame must be delivered");
    assert!((ticks.len() as u64) < n, "no frame was dropped");
}

#[test]
fn commands_for_non_teleop_agents_are_rejected() {
    let bridge = Bridge::bind("127.0.0.1:0").unwrap();
    let sim = Simulation::new(&scripted_scenario(ControllerKind::Teleop), 0).unwrap();
    bridge.sink().begin(&sim.info());
    let mut ws = connect(bridge.local_addr());
    hello(&mut ws);
    send(&mut ws, &teleop(0, 1.0, 0.0));
    assert!(matches!(
        recv_control(&mut ws),
        ServerMessage::Error {
            code: ErrorCode::NotTeleop,
            ..
        }
    ));
    assert_eq!(bridge.teleop().latest(0), None);
    send(&mut ws, &teleop(5, 1.0, 0.0));
    assert!(matches!(
        recv_control(&mut ws),
        ServerMessage::Error {
            code: ErrorCode::UnknownAgent,
            ..
        }
    ));
    send(&mut ws, &teleop(1, -0.5, f64::MAX));
    assert!(matches!(
        recv_control(&mut ws),
        ServerMessage::TeleopAck { agent_id: 1, surge, yaw } if surge == -0.5 && yaw == 1.0
    ));
    assert_eq!(bridge.teleop().latest(1).map(|c| (c.surge, c.yaw)), Some((-0.5, 1.0)));
}

#[test]
fn bridge_is_read_only_without_teleop_agents() {
    let scenario = scripted_scenario(ControllerKind::Scripted(ScriptedPolicy::ConstantVelocity));
    let mut reference = Simulation::new(&scenario, 11).unwrap();
    reference.run(None);
    let (_, reference) = reference.finish();

    let bridge = Bridge::bind("127.0.0.1:0").unwrap();
    let mut sim = Simulation::new(&scenario, 11).unwrap();
    sim.attach_sink(bridge.sink());
    let mut ws = connect(bridge.local_addr());
    hello(&mut ws);
    wait_clients(&bridge, 1);
    let mut rejected = 0;
    while sim.step(Some(bridge.teleop())).is_none() {
        for id in 0..3 {
            send(&mut ws, &teleop(id, 1.0, 1.0));
        }
        while let Some(text) = recv_raw(&mut ws, Duration::from_millis(1)) {
            if let ServerMessage::Error { code, .. } = serde_json::from_str(&text).unwrap() {
                assert!(matches!(code, ErrorCode::NotTeleop | ErrorCode::UnknownAgent));
                rejected += 1;
            }
        }
    }
    let (_, log) = sim.finish();
    assert!(rejected > 0);
    assert_eq!(log.content_hash(), reference.content_hash());
}

#[test]
fn teleop_command_applies_on_the_next_tick() {
    let scenario = scripted_scenario(ControllerKind::Teleop);
    let bridge = Bridge::bind("127.0.0.1:0").unwrap();
    let mut sim = Simulation::new(&scenario, 0).unwrap();
    sim.attach_sink(bridge.sink());
    let mut ws = connect(bridge.local_addr());
    hello(&mut ws);

    assert!(sim.step(Some(bridge.teleop())).is_none());
    let f_max = scenario.vessel.f_max;
    for (k, (surge, yaw)) in [(1.0, 0.0), (0.0, 0.0), (-0.4, 0.6)].into_iter().enumerate() {
        send(&mut ws, &teleop(1, surge, yaw));
        assert!(matches!(
            recv_control(&mut ws),
            ServerMessage::TeleopAck { agent_id: 1, .. }
        ));
        assert!(sim.step(Some(bridge.teleop())).is_none());
        let applied = sim.log().ticks[k + 1].inputs[1];
        let expected = ControlInput::new(
            surge * f_max / 2.0,
            surge * f_max / 2.0,
            yaw * f_max / 2.0,
            -yaw * f_max / 2.0,
        );
        assert_eq!(applied, expected, "tick {}", k + 1);
    }
    assert_eq!(sim.log().ticks[0].inputs[1], ControlInput::ZERO);
}

#[test]
fn episode_end_is_broadcast() {
    let bridge = Bridge::bind("127.0.0.1:0").unwrap();
    let mut ws = connect(bridge.local_addr());
    hello(&mut ws);
    wait_clients(&bridge, 1);
    let mut sim = Simulation::new(
        &scripted_scenario(ControllerKind::Scripted(ScriptedPolicy::HoldPosition)),
        0,
    )
    .unwrap();
    sim.attach_sink(bridge.sink());
    sim.run(None);
    let mut last = None;
    while let Some(text) = recv_raw(&mut ws, Duration::from_millis(200)) {
        last = Some(serde_json::from_str::<ServerMessage>(&text).unwrap());
    }
    assert_eq!(last, Some(ServerMessage::EpisodeEnd));
}

#[test]
fn disconnecting_client_is_dropped_silently() {
    let bridge = Bridge::bind("127.0.0.1:0").unwrap();
    let sink = bridge.sink();
    {
        let mut ws = connect(bridge.local_addr());
        hello(&mut ws);
        wait_clients(&bridge, 1);
        ws.close(None).unwrap();
        let _ = recv_raw(&mut ws, Duration::from_millis(100));
    }
    for t in 0..50 {
        sink.publish(&empty_snapshot(t));
        std::thread::sleep(Duration::from_millis(1));
    }
    wait_clients(&bridge, 0);
}
