use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Input violates a documented precondition. `key` names the offending field.
    #[error("invalid {key}: {reason}")]
    Validation { key: String, reason: String },

    /// Placement invariant broken while resolving a token's expert.
    #[error("routing failed at layer {layer}: {reason}")]
    Routing { layer: usize, reason: String },

    #[error("illegal request state transition {from:?} -> {to:?} for request {request_id}")]
    StateTransition {
        request_id: u64,
        from: crate::workload::RequestState,
        to: crate::workload::RequestState,
    },

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(key: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Validation {
        key: key.into(),
        reason: reason.into(),
    }
}
