use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("frame chain mismatch: expected `{expected}`, found `{found}`")]
    FrameChain { expected: String, found: String },
    #[error("need at least 3 markers, got {got}")]
    InsufficientMarkers { got: usize },
    #[error("point lists differ in length ({model} vs {observed})")]
    LengthMismatch { model: usize, observed: usize },
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("rays are parallel")]
    ParallelRays,
    #[error("point at radius {radius:.3} px lies outside the domain of radius {limit:.3} px")]
    Domain { radius: f64, limit: f64 },
    #[error("underconstrained fit: {observations} observations for {unknowns} unknowns (rank {rank})")]
    UnderconstrainedFit {
        observations: usize,
        unknowns: usize,
        rank: usize,
    },
    #[error("need at least {required} fiducials, got {got}")]
    InsufficientFiducials { got: usize, required: usize },
    #[error("ill-conditioned line bundle (condition number {condition:.3e})")]
    IllConditioned { condition: f64 },
    #[error("projection ray does not meet the detector plane")]
    ProjectionAtInfinity,
    #[error("point lies behind the X-ray source")]
    BehindSource,
    #[error("body `{body}` not visible ({visible} markers)")]
    BodyNotVisible { body: String, visible: usize },
    #[error("ambiguous fiducial correspondence: {0}")]
    AmbiguousCorrespondence(String),
    #[error("unknown fiducial id {0}")]
    UnknownFiducial(u32),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("exposure log is empty")]
    EmptyLog,
    #[error("division by zero: {0}")]
    DivisionByZero(&'static str),
}
