//! Live state streaming and teleoperation over WebSocket.
//!
//! A client connects, sends `hello` with the schema version it speaks and
//! receives `welcome` (or an `error` and a close on mismatch). After that the
//! server pushes `episode`, `frame` and `episode_end` messages, and the client
//! may send `teleop` commands for vessels controlled that way. Slow clients
//! only ever see the newest frame. See `PROTOCOL.md` for the field list.

pub mod protocol;
pub mod replay;
pub mod server;

pub use protocol::{ClientMessage, ErrorCode, Frame, FrameAgent, MapRaster, ServerMessage, SCHEMA_VERSION};
pub use replay::replay;
pub use server::Bridge;
