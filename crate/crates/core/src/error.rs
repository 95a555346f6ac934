use alloc::string::String;

/// Errors raised by the core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: dimension mismatch on axis {axis}: expected {expected}, found {found}")]
    Dimension {
        op: &'static str,
        axis: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("{op}: expected a rank-{expected} tensor, found rank {found}")]
    Rank {
        op: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("shape {shape:?} holds {expected} elements but {found} were supplied")]
    DataLength {
        shape: alloc::vec::Vec<usize>,
        expected: usize,
        found: usize,
    },
    #[error("{op}: {reason}")]
    InvalidArgument { op: &'static str, reason: String },
    #[error("{op}: {axis} extent {extent} is odd")]
    OddExtent {
        op: &'static str,
        axis: &'static str,
        extent: usize,
    },
    #[error("target row {row} is not one-hot")]
    NotOneHot { row: usize },
    #[error("backward requires a scalar loss, found {numel} elements")]
    NotScalar { numel: usize },
    #[error("backward already ran on this tape; reset gradients first")]
    BackwardTwice,
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("unsupported backbone {backbone} for input {channels}x{height}x{width}")]
    UnsupportedInput {
        backbone: &'static str,
        channels: usize,
        height: usize,
        width: usize,
    },
    #[error("parameter {name}: shape drift, expected {expected:?}, found {found:?}")]
    ShapeDrift {
        name: String,
        expected: alloc::vec::Vec<usize>,
        found: alloc::vec::Vec<usize>,
    },
    #[error("dataset {dataset}: {reason}")]
    Dataset { dataset: String, reason: String },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
