use thiserror::Error;

use crate::session::Phase;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("`{action}` is not allowed in phase {phase}: {reason}")]
    IllegalTransition {
        phase: Phase,
        action: &'static str,
        reason: String,
    },
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("scene invalid at `{path}`: {message}")]
    SceneValidation { path: String, message: String },
    #[error("malformed event log at line {line}: {message}")]
    MalformedLog { line: usize, message: String },
    #[error("replay diverged from the recording at event {seq}")]
    ReplayDiverged { seq: u64 },
    #[error(transparent)]
    Core(#[from] vfnav_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ServiceError {
    /// Process exit code: 1 for bad input, 2 for everything that failed at
    /// run time.
    pub fn exit_code(&self) -> i32 {
        match self {
            ServiceError::SceneValidation { .. } | ServiceError::MalformedLog { .. } => 1,
            _ => 2,
        }
    }

    /// Stable machine-readable code used on the wire.
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::IllegalTransition { .. } => "illegal_transition",
            ServiceError::UnknownSession(_) => "unknown_session",
            ServiceError::SceneValidation { .. } => "scene_validation",
            ServiceError::MalformedLog { .. } => "malformed_log",
            ServiceError::ReplayDiverged { .. } => "replay_diverged",
            ServiceError::Core(_) => "engine",
            ServiceError::Io(_) => "io",
        }
    }
}

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;
