use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Crate-wide error taxonomy.
///
/// Every variant maps onto a stable machine-readable code (see [`Error::code`])
/// which the HTTP layer puts into its error bodies.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("provider unreachable: {0}")]
    ProviderUnreachable(String),

    #[error("provider call timed out after {0:?}")]
    Timeout(std::time::Duration),

    #[error("provider returned an empty completion")]
    ProviderRefusal,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("image could not be decoded: {0}")]
    UndecodableImage(String),

    #[error("zero vector has no direction")]
    ZeroVector,

    #[error("invalid embedding: {0}")]
    InvalidEmbedding(String),

    #[error("invalid bounding box: {0}")]
    InvalidBoundingBox(String),

    #[error("invalid event: {0}")]
    InvalidEvent(String),

    #[error("storage failure: {0}")]
    StorageFailure(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("invalid session state: expected {expected}, session is {actual}")]
    InvalidState { expected: &'static str, actual: String },

    #[error("could not parse model output: {0}")]
    ParseFailure(String),

    #[error("crop rounds to an empty region ({width}x{height} px)")]
    DegenerateCrop { width: u32, height: u32 },

    #[error("threshold not reached: {count} of {threshold} events since last export")]
    ThresholdNotReached { count: usize, threshold: usize },

    #[error("trainer unreachable: {0}")]
    TrainerUnreachable(String),

    #[error("training job failed: {0}")]
    JobFailed(String),

    #[error("a training job is already pending: {0}")]
    JobPending(String),

    #[error("invalid config field `{field}`: {reason}")]
    ConfigInvalid { field: String, reason: String },

    #[error("invalid simulation script: {0}")]
    ScriptInvalid(String),

    #[error("session is busy with another request")]
    SessionBusy,

    #[error("bad request: {0}")]
    BadRequest(String),

    #[error("could not bind listener: {0}")]
    BindFailure(String),
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::EmptyInput(_) => "empty_input",
            Error::ProviderUnreachable(_) => "provider_unreachable",
            Error::Timeout(_) => "timeout",
            Error::ProviderRefusal => "provider_refusal",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::UndecodableImage(_) => "undecodable_image",
            Error::ZeroVector => "zero_vector",
            Error::InvalidEmbedding(_) => "invalid_embedding",
            Error::InvalidBoundingBox(_) => "invalid_bounding_box",
            Error::InvalidEvent(_) => "invalid_event",
            Error::StorageFailure(_) => "storage_failure",
            Error::NotFound(_) => "not_found",
            Error::InvalidState { .. } => "invalid_state",
            Error::ParseFailure(_) => "parse_failure",
            Error::DegenerateCrop { .. } => "degenerate_crop",
            Error::ThresholdNotReached { .. } => "threshold_not_reached",
            Error::TrainerUnreachable(_) => "trainer_unreachable",
            Error::JobFailed(_) => "job_failed",
            Error::JobPending(_) => "job_pending",
            Error::ConfigInvalid { .. } => "config_invalid",
            Error::ScriptInvalid(_) => "script_invalid",
            Error::SessionBusy => "session_busy",
            Error::BadRequest(_) => "bad_request",
            Error::BindFailure(_) => "bind_failure",
        }
    }

    pub(crate) fn storage(context: &str, err: impl std::fmt::Display) -> Self {
        Error::StorageFailure(format!("{context}: {err}"))
    }
}
