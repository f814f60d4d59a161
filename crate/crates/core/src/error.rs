use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("negative time at line {line}")]
    NegativeTime { line: usize },
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("hazard is not integrable on [0, {horizon}]")]
    NonIntegrableHazard { horizon: f64 },
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error("empty window: no weighted failures in [{a}, {b}]")]
    EmptyWindow { a: f64, b: f64 },
    #[error("insufficient window: {events} failures, need {required}")]
    InsufficientWindow { events: usize, required: usize },
    #[error("no events in [{a}, {b}]")]
    NoEvents { a: f64, b: f64 },
    #[error("fit did not converge after {iterations} iterations (score residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("singular information matrix (condition number {condition:.3e})")]
    SingularMatrix { condition: f64 },
    #[error("unbounded optimal bandwidth: bias factor is zero")]
    UnboundedBandwidth,
    #[error("pilot estimate failed: {0}")]
    Pilot(String),
    #[error("no bandwidth reaches {min_events} failures in the window")]
    MinEventsUnreachable { min_events: usize },
    #[error("statistic {kind} is incompatible with a {dim}-parameter family")]
    IncompatibleStatistic { kind: String, dim: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
