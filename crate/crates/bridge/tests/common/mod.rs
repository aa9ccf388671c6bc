#![allow(dead_code)]

use std::net::{SocketAddr, TcpStream};
use std::time::{Duration, Instant};

use canal_bridge::{ClientMessage, ServerMessage, SCHEMA_VERSION};
use canal_core::engine::{AgentSpec, ControllerKind, MapSource, Pose, ScenarioConfig, ScriptedPolicy};
use tungstenite::stream::MaybeTlsStream;
use tungstenite::{Message, WebSocket};

pub type Ws = WebSocket<MaybeTlsStream<TcpStream>>;

pub fn connect(addr: SocketAddr) -> Ws {
    let (ws, _) = tungstenite::connect(format!("ws://{addr}")).expect("connect");
    if let MaybeTlsStream::Plain(s) = ws.get_ref() {
        s.set_read_timeout(Some(Duration::from_millis(20))).unwrap();
    }
    ws
}

pub fn send(ws: &mut Ws, msg: &ClientMessage) {
    ws.send(Message::text(msg.to_json())).unwrap();
}

pub fn send_raw(ws: &mut Ws, text: &str) {
    ws.send(Message::text(text)).unwrap();
}

/// Next text message as raw JSON, or None after `timeout` of silence or on close.
pub fn recv_raw(ws: &mut Ws, timeout: Duration) -> Option<String> {
    let deadline = Instant::now() + timeout;
    loop {
        match ws.read() {
            Ok(Message::Text(t)) => return Some(t.to_string()),
            Ok(Message::Close(_)) => return None,
            Ok(_) => {}
            Err(tungstenite::Error::Io(e))
                if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) =>
            {
                if Instant::now() >= deadline {
                    return None;
                }
            }
            Err(_) => return None,
        }
    }
}

pub fn recv(ws: &mut Ws) -> ServerMessage {
    let text = recv_raw(ws, Duration::from_secs(5)).expect("server message");
    serde_json::from_str(&text).expect("valid server message")
}

/// Next message that is not a frame.
pub fn recv_control(ws: &mut Ws) -> ServerMessage {
    loop {
        match recv(ws) {
            ServerMessage::Frame(_) => continue,
            m => return m,
        }
    }
}

pub fn hello(ws: &mut Ws) -> ServerMessage {
    send(
        ws,
        &ClientMessage::Hello {
            schema_version: SCHEMA_VERSION,
            client: "test".into(),
        },
    );
    recv(ws)
}

/// Blocks until the bridge reports `n` registered clients.
pub fn wait_clients(bridge: &canal_bridge::Bridge, n: usize) {
    let deadline = Instant::now() + Duration::from_secs(5);
    while bridge.client_count() != n {
        assert!(Instant::now() < deadline, "client never registered");
        std::thread::sleep(Duration::from_millis(2));
    }
}

/// Planner-free two-vessel scenario in open water. Vessel 1 uses `second`.
pub fn scripted_scenario(second: ControllerKind) -> ScenarioConfig {
    let map = MapSource::OpenWater {
        width_m: 60.0,
        height_m: 30.0,
        resolution_m: 0.5,
    };
    let a = AgentSpec::new(
        0,
        ControllerKind::Scripted(ScriptedPolicy::ConstantVelocity),
        Pose {
            x_m: 10.0,
            y_m: 10.0,
            heading_rad: 0.0,
        },
        Some(point(50.0, 10.0)),
    );
    let b = AgentSpec::new(
        1,
        second,
        Pose {
            x_m: 30.0,
            y_m: 22.0,
            heading_rad: std::f64::consts::PI,
        },
        Some(point(10.0, 22.0)),
    );
    let mut sc = ScenarioConfig::new(map, vec![a, b]);
    sc.max_time_s = 5.0;
    sc
}

pub fn point(x: f64, y: f64) -> canal_core::Point {
    canal_core::Point::new(x, y)
}
