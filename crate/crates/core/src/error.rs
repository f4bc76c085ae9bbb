use thiserror::Error;

/// Errors raised by the pricing engine.
///
/// Numerical failures carry the module, the time step (when one applies)
/// and a short description of the condition that failed.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum QlbsError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("{module}: shape mismatch: {detail}")]
    ShapeMismatch { module: &'static str, detail: String },

    #[error("{module} (t={t:?}): degenerate input: {condition}")]
    DegenerateInput {
        module: &'static str,
        t: Option<usize>,
        condition: String,
    },

    #[error("{module} (t={t:?}): linear solve failed: {condition}")]
    SingularSystem {
        module: &'static str,
        t: Option<usize>,
        condition: String,
    },

    #[error("{module} (t={t:?}): non-finite value: {condition}")]
    NonFinite {
        module: &'static str,
        t: Option<usize>,
        condition: String,
    },

    #[error("{module} (t={t:?}): did not converge: {condition}")]
    NoConvergence {
        module: &'static str,
        t: Option<usize>,
        condition: String,
    },

    #[error("parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl QlbsError {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        QlbsError::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn degenerate(module: &'static str, t: Option<usize>, condition: impl Into<String>) -> Self {
        QlbsError::DegenerateInput {
            module,
            t,
            condition: condition.into(),
        }
    }

    pub(crate) fn shape(module: &'static str, detail: impl Into<String>) -> Self {
        QlbsError::ShapeMismatch {
            module,
            detail: detail.into(),
        }
    }

    /// True for failures of the numerical machinery (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            QlbsError::DegenerateInput { .. }
                | QlbsError::SingularSystem { .. }
                | QlbsError::NonFinite { .. }
                | QlbsError::NoConvergence { .. }
        )
    }
}

impl From<std::io::Error> for QlbsError {
    fn from(e: std::io::Error) -> Self {
        QlbsError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, QlbsError>;
