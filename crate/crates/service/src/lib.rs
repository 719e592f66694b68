//! Session orchestration for the vfnav navigation engine: scene files, the
//! procedure state machine with its JSONL event log, deterministic replay,
//! the wire protocol and the HTTP/WebSocket server.

pub mod autopilot;
pub mod cli;
pub mod error;
pub mod protocol;
pub mod scene;
pub mod selftest;
pub mod server;
pub mod session;

pub use error::{Result, ServiceError};
pub use scene::Scene;
pub use session::{replay, EventKind, EventRecord, Phase, Session};
