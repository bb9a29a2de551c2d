use alloc::string::String;

use thiserror::Error;

pub type Result<T, E = PsrError> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PsrError {
    /// Inputs violate a structural invariant (bit widths, component indices, ordering).
    #[error("structural error: {0}")]
    Structural(String),

    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("stream error at frame {frame}: {reason}")]
    Stream { frame: u64, reason: String },

    #[error("frames are not aligned: asd frame {asd}, temporal frame {temporal}")]
    Alignment { asd: u64, temporal: u64 },

    #[error("component {component} changed ({kind}) but the procedure has no matching action")]
    UnknownTransition { component: usize, kind: &'static str },

    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),

    #[error("loss undefined: {0}")]
    UndefinedLoss(&'static str),

    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
}

impl PsrError {
    pub(crate) fn arg(name: &'static str, reason: impl Into<String>) -> Self {
        PsrError::InvalidArgument { name, reason: reason.into() }
    }

    pub(crate) fn config(field: &'static str, reason: impl Into<String>) -> Self {
        PsrError::InvalidConfig { field, reason: reason.into() }
    }
}
