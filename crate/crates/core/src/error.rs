use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("coordinates outside chart of {point}: {detail}")]
    Domain { point: String, detail: String },

    #[error("trajectory not in domain: {0}")]
    NotInDomain(String),

    #[error("trajectory ends on slice: {0}")]
    EndsOnSlice(String),

    #[error("blowup point: evaluation undefined ({0})")]
    BlowupPoint(String),

    #[error("flow leaves the modelled region from {from}: {detail}")]
    LeavesModel { from: String, detail: String },

    #[error("unresolved limit near {0}")]
    UnresolvedLimit(String),

    #[error("integration timeout after time {0}")]
    Timeout(f64),

    #[error("undetected connection {from} -> {to}: {detail}")]
    UndetectedConnection { from: String, to: String, detail: String },

    #[error("projection failure at {0}")]
    ProjectionFailure(String),

    #[error("submersion violation: {0}")]
    SubmersionViolation(String),

    #[error("chart inversion failure: {0}")]
    ChartInversion(String),

    #[error("endpoint mismatch: {0}")]
    EndpointMismatch(String),

    #[error("constraint violation: {0}")]
    Constraint(String),

    #[error("schema violation: {0}")]
    Schema(String),

    #[error("unknown critical point '{0}'")]
    UnknownPoint(String),

    #[error("io: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Schema(e.to_string())
    }
}
