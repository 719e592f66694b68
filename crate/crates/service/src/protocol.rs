//! Wire protocol spoken over the session stream. See `PROTOCOL.md` in this
//! crate for the message catalogue.

use serde::{Deserialize, Serialize};
use vfnav_core::navigation::SteerCommand;

use crate::session::{FrameUpdate, GradeReport, Phase, SteerRecord};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    /// Advance the tracker by `count` frames.
    Tick {
        #[serde(default = "one")]
        count: u32,
    },
    Steer {
        translate_mm: [f64; 3],
        rotate_deg: [f64; 3],
    },
    InsertAndGrade,
    Ping,
}

fn one() -> u32 {
    1
}

impl ClientMessage {
    pub fn steer_command(translate_mm: [f64; 3], rotate_deg: [f64; 3]) -> SteerCommand<f64> {
        SteerCommand {
            translate_mm: translate_mm.into(),
            rotate_deg: rotate_deg.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello {
        session_id: String,
        phase: Phase,
        /// Events already in the log; a reconnecting client fetches these
        /// from the log endpoint.
        events: u64,
    },
    Frame {
        seq: u64,
        #[serde(flatten)]
        update: FrameUpdate,
    },
    Steered {
        seq: u64,
        #[serde(flatten)]
        record: SteerRecord,
    },
    Grade {
        seq: u64,
        report: GradeReport,
    },
    Error {
        code: String,
        message: String,
    },
    Pong,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientEnvelope {
    pub v: u32,
    #[serde(flatten)]
    pub message: ClientMessage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerEnvelope {
    pub v: u32,
    #[serde(flatten)]
    pub message: ServerMessage,
}

impl ServerEnvelope {
    pub fn new(message: ServerMessage) -> Self {
        Self {
            v: PROTOCOL_VERSION,
            message,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages serialize")
    }
}

/// Parses a client message, rejecting unknown protocol versions.
pub fn parse_client(text: &str) -> Result<ClientMessage, ServerMessage> {
    let env: ClientEnvelope = serde_json::from_str(text).map_err(|e| ServerMessage::Error {
        code: "bad_message".into(),
        message: e.to_string(),
    })?;
    if env.v != PROTOCOL_VERSION {
        return Err(ServerMessage::Error {
            code: "unsupported_version".into(),
            message: format!("protocol version {} is not supported (expected {PROTOCOL_VERSION})", env.v),
        });
    }
    Ok(env.message)
}
