use thiserror::Error;

pub type Result<T> = std::result::Result<T, AutodiffError>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    /// Operand shapes are incompatible for the requested operation.
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    /// An argument is out of its admissible range.
    #[error("{op}: invalid parameter: {reason}")]
    Parameter { op: &'static str, reason: String },
    /// A caller-side contract was violated (non-scalar loss, nondeterministic function, ...).
    #[error("contract violation: {0}")]
    Contract(String),
}

impl AutodiffError {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        AutodiffError::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn param(op: &'static str, reason: impl Into<String>) -> Self {
        AutodiffError::Parameter {
            op,
            reason: reason.into(),
        }
    }
}
