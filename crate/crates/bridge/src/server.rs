//! WebSocket server: one thread per client, latest-frame-only delivery.

use std::collections::{HashMap, HashSet, VecDeque};
use std::io::ErrorKind;
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use tungstenite::{Message, WebSocket};

use canal_core::engine::{ControllerKind, EpisodeInfo, FrameSink, TeleopCommand, TeleopSource, TickSnapshot};
use canal_core::AgentId;

use crate::protocol::{ClientMessage, ErrorCode, Frame, MapRaster, ServerMessage, SCHEMA_VERSION};

const POLL: Duration = Duration::from_millis(5);

/// Pending messages in send order. A new frame replaces a frame still
/// waiting at the tail, so frames are dropped but never reordered with
/// respect to each other or to control messages.
#[derive(Default)]
struct Outbox {
    queue: VecDeque<Pending>,
    closed: bool,
}

enum Pending {
    Control(Arc<str>),
    Frame(Arc<str>),
}

struct Client {
    outbox: Mutex<Outbox>,
}

#[derive(Default)]
struct Episode {
    info: Option<EpisodeInfo>,
    raster: Option<MapRaster>,
    agents: HashSet<AgentId>,
    teleop: HashSet<AgentId>,
}

struct Shared {
    clients: Mutex<Vec<Arc<Client>>>,
    episode: Mutex<Episode>,
    latches: Mutex<HashMap<AgentId, TeleopCommand>>,
    stop: AtomicBool,
}

impl Shared {
    fn broadcast_control(&self, msg: &ServerMessage) {
        let text: Arc<str> = msg.to_json().into();
        for c in self.clients.lock().unwrap().iter() {
            c.outbox.lock().unwrap().queue.push_back(Pending::Control(text.clone()));
        }
    }

    fn handle(&self, msg: ClientMessage) -> ServerMessage {
        match msg {
            ClientMessage::Hello { .. } => ServerMessage::Error {
                code: ErrorCode::Malformed,
                message: "handshake already completed".into(),
            },
            ClientMessage::Teleop(cmd) => {
                let ep = self.episode.lock().unwrap();
                if !ep.agents.contains(&cmd.agent_id) {
                    return ServerMessage::Error {
                        code: ErrorCode::UnknownAgent,
                        message: format!("no agent with id {}", cmd.agent_id),
                    };
                }
                if !ep.teleop.contains(&cmd.agent_id) {
                    return ServerMessage::Error {
                        code: ErrorCode::NotTeleop,
                        message: format!("agent {} is not teleoperated", cmd.agent_id),
                    };
                }
                let cmd = cmd.clamped();
                self.latches.lock().unwrap().insert(cmd.agent_id, cmd);
                ServerMessage::TeleopAck {
                    agent_id: cmd.agent_id,
                    surge: cmd.surge,
                    yaw: cmd.yaw,
                }
            }
        }
    }
}

impl FrameSink for Shared {
    fn begin(&self, info: &EpisodeInfo) {
        let raster = info.map.build().ok().map(|g| MapRaster::from_grid(&g));
        {
            let mut ep = self.episode.lock().unwrap();
            ep.agents = info.agents.iter().map(|a| a.id).collect();
            ep.teleop = info
                .agents
                .iter()
                .filter(|a| a.controller == ControllerKind::Teleop)
                .map(|a| a.id)
                .collect();
            ep.info = Some(info.clone());
            ep.raster = raster.clone();
        }
        self.latches.lock().unwrap().clear();
        self.broadcast_control(&ServerMessage::Episode {
            episode: info.clone(),
            map_raster: raster,
        });
    }

    fn publish(&self, snapshot: &TickSnapshot) {
        let clients = self.clients.lock().unwrap();
        if clients.is_empty() {
            return;
        }
        let (map, hash) = {
            let ep = self.episode.lock().unwrap();
            match &ep.info {
                Some(i) => (i.map.clone(), i.map_hash.clone()),
                None => return,
            }
        };
        let text: Arc<str> = ServerMessage::Frame(Frame::from_snapshot(snapshot, &map, &hash))
            .to_json()
            .into();
        for c in clients.iter() {
            let mut o = c.outbox.lock().unwrap();
            match o.queue.back_mut() {
                Some(Pending::Frame(f)) => *f = text.clone(),
                _ => o.queue.push_back(Pending::Frame(text.clone())),
            }
        }
    }

    fn end(&self) {
        self.broadcast_control(&ServerMessage::EpisodeEnd);
    }
}

impl TeleopSource for Shared {
    fn latest(&self, agent: AgentId) -> Option<TeleopCommand> {
        self.latches.lock().unwrap().get(&agent).copied()
    }
}

/// Handle to a running bridge. Dropping it stops the accept loop.
pub struct Bridge {
    shared: Arc<Shared>,
    addr: SocketAddr,
    accept: Option<JoinHandle<()>>,
}

impl Bridge {
    pub fn bind<A: ToSocketAddrs>(addr: A) -> std::io::Result<Bridge> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        listener.set_nonblocking(true)?;
        let shared = Arc::new(Shared {
            clients: Mutex::new(Vec::new()),
            episode: Mutex::new(Episode::default()),
            latches: Mutex::new(HashMap::new()),
            stop: AtomicBool::new(false),
        });
        let s = shared.clone();
        let accept = std::thread::spawn(move || {
            while !s.stop.load(Ordering::SeqCst) {
                match listener.accept() {
                    Ok((stream, _)) => {
                        let s = s.clone();
                        std::thread::spawn(move || serve_client(s, stream));
                    }
                    Err(e) if e.kind() == ErrorKind::WouldBlock => std::thread::sleep(POLL),
                    Err(_) => std::thread::sleep(POLL),
                }
            }
        });
        Ok(Bridge {
            shared,
            addr,
            accept: Some(accept),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Sink to attach to a simulation.
    pub fn sink(&self) -> Arc<dyn FrameSink> {
        self.shared.clone()
    }

    /// Teleop latches, read by the simulation once per tick.
    pub fn teleop(&self) -> &dyn TeleopSource {
        self.shared.as_ref()
    }

    /// Clients that completed the handshake and are still connected.
    pub fn client_count(&self) -> usize {
        self.shared.clients.lock().unwrap().len()
    }
}

impl Drop for Bridge {
    fn drop(&mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        for c in self.shared.clients.lock().unwrap().iter() {
            c.outbox.lock().unwrap().closed = true;
        }
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

fn send(ws: &mut WebSocket<TcpStream>, text: &str) -> bool {
    ws.send(Message::text(text)).is_ok()
}

fn read_text(ws: &mut WebSocket<TcpStream>) -> Result<Option<String>, ()> {
    match ws.read() {
        Ok(Message::Text(t)) => Ok(Some(t.to_string())),
        Ok(Message::Close(_)) => Err(()),
        Ok(_) => Ok(None),
        Err(tungstenite::Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => Ok(None),
        Err(_) => Err(()),
    }
}

fn handshake(shared: &Shared, ws: &mut WebSocket<TcpStream>) -> bool {
    let text = loop {
        if shared.stop.load(Ordering::SeqCst) {
            return false;
        }
        match read_text(ws) {
            Ok(Some(t)) => break t,
            Ok(None) => continue,
            Err(()) => return false,
        }
    };
    let reply_err = |ws: &mut WebSocket<TcpStream>, code, message: String| {
        send(ws, &ServerMessage::Error { code, message }.to_json());
        let _ = ws.close(None);
        let _ = ws.flush();
        false
    };
    match serde_json::from_str::<ClientMessage>(&text) {
        Ok(ClientMessage::Hello { schema_version, .. }) if schema_version == SCHEMA_VERSION => {
            let ep = shared.episode.lock().unwrap();
            send(
                ws,
                &ServerMessage::Welcome {
                    schema_version: SCHEMA_VERSION,
                    episode: ep.info.clone(),
                    map_raster: ep.raster.clone(),
                }
                .to_json(),
            )
        }
        Ok(ClientMessage::Hello { schema_version, .. }) => reply_err(
            ws,
            ErrorCode::SchemaMismatch,
            format!("server speaks schema {SCHEMA_VERSION}, client sent {schema_version}"),
        ),
        Ok(_) => reply_err(ws, ErrorCode::HandshakeRequired, "first message must be hello".into()),
        Err(e) => reply_err(ws, ErrorCode::Malformed, e.to_string()),
    }
}

fn serve_client(shared: Arc<Shared>, stream: TcpStream) {
    let _ = stream.set_nonblocking(false);
    let _ = stream.set_nodelay(true);
    if stream.set_read_timeout(Some(POLL)).is_err() {
        return;
    }
    let mut ws = match tungstenite::accept(stream) {
        Ok(ws) => ws,
        Err(_) => return,
    };
    if !handshake(&shared, &mut ws) {
        return;
    }
    let client = Arc::new(Client {
        outbox: Mutex::new(Outbox::default()),
    });
    shared.clients.lock().unwrap().push(client.clone());
    loop {
        let (pending, closed) = {
            let mut o = client.outbox.lock().unwrap();
            (o.queue.drain(..).collect::<Vec<_>>(), o.closed)
        };
        if closed || shared.stop.load(Ordering::SeqCst) {
            let _ = ws.close(None);
            let _ = ws.flush();
            break;
        }
        let ok = pending.iter().all(|p| match p {
            Pending::Control(t) | Pending::Frame(t) => send(&mut ws, t),
        });
        if !ok {
            break;
        }
        match read_text(&mut ws) {
            Ok(Some(text)) => {
                let reply = match serde_json::from_str::<ClientMessage>(&text) {
                    Ok(msg) => shared.handle(msg),
                    Err(e) => ServerMessage::Error {
                        code: ErrorCode::Malformed,
                        message: e.to_string(),
                    },
                };
                if !send(&mut ws, &reply.to_json()) {
                    break;
                }
            }
            Ok(None) => {}
            Err(()) => break,
        }
    }
    shared.clients.lock().unwrap().retain(|c| !Arc::ptr_eq(c, &client));
}
