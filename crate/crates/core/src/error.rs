use alloc::string::String;

/// Errors raised by the loss kernels, oracles and samplers.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch, left is {left:?}, right is {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("{op}: length mismatch, expected {expected}, got {actual}")]
    LengthMismatch {
        op: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("row {row}: item index {index} out of range for catalog of {bound}")]
    IndexOutOfRange { row: usize, index: usize, bound: usize },
    #[error("row {row}: slot {slot} repeats the positive item {item}")]
    PositiveCollision { row: usize, slot: usize, item: usize },
    #[error("row {row}: index matrix slot 0 holds {found}, expected positive {expected}")]
    PositiveMismatch { row: usize, found: usize, expected: usize },
    #[error("{0}: empty input")]
    Empty(&'static str),
    #[error("non-finite value at flat offset {0}")]
    NonFinite(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("memory accounting unbalanced at tag {0}")]
    Unbalanced(&'static str),
    #[error("sampler: {0}")]
    Sampler(String),
}

pub type Result<T> = core::result::Result<T, Error>;
