use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {op} got shapes {lhs:?} and {rhs:?}")]
    DimensionMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid dataset spec: {0}")]
    DatasetSpec(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("feature value {value} out of range for feature {feature} (vocab {vocab})")]
    Lookup {
        feature: usize,
        value: usize,
        vocab: usize,
    },
    #[error("missing latency table entry for shape {in_dim}x{out_dim}")]
    MissingLatencyEntry { in_dim: usize, out_dim: usize },
    #[error("enumeration space too large: {size} assignments exceed bound {bound}")]
    SpaceTooLarge { size: u64, bound: u64 },
    #[error("search diverged: non-finite loss at step {step}")]
    Diverged { step: usize },
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
