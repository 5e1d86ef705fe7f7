use alloc::string::String;
use core::fmt;

/// Errors produced by the core engine and model code.
#[derive(Debug, Clone, PartialEq)]
pub enum CoreError {
    /// An op was handed tensors whose shapes do not conform to its signature.
    /// Carries the op name and a description of the offending dimensions.
    ShapeMismatch { op: &'static str, detail: String },
    /// An argument was outside its documented domain (e.g. temperature <= 0).
    InvalidArg { what: &'static str, detail: String },
    /// A computation produced or received a non-finite value.
    NonFinite { where_: &'static str, detail: String },
    /// A `requires_grad` parameter had no gradient when one was required.
    MissingGrad { param: String },
    /// A keyed lookup (feature store, class table) found nothing.
    NotFound { what: &'static str, key: String },
    /// An operation that needs at least one element got an empty collection.
    Empty { what: &'static str },
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::ShapeMismatch { op, detail } => {
                write!(f, "shape mismatch in `{op}`: {detail}")
            }
            CoreError::InvalidArg { what, detail } => {
                write!(f, "invalid argument `{what}`: {detail}")
            }
            CoreError::NonFinite { where_, detail } => {
                write!(f, "non-finite value in {where_}: {detail}")
            }
            CoreError::MissingGrad { param } => {
                write!(f, "parameter `{param}` requires grad but none was computed")
            }
            CoreError::NotFound { what, key } => write!(f, "{what} not found: {key}"),
            CoreError::Empty { what } => write!(f, "{what} is empty"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for CoreError {}

pub type Result<T> = core::result::Result<T, CoreError>;
