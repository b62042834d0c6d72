use thiserror::Error;

/// Crate-wide error type.
///
/// Variants are grouped by the layer that raises them: format codecs,
/// integer kernels, the autograd pipeline, the trainer, and file I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch, left is {left_rows}x{left_cols}, right is {right_rows}x{right_cols}")]
    ShapeMismatch {
        op: &'static str,
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },

    #[error("{op}: group spec mismatch: {detail}")]
    SpecMismatch { op: &'static str, detail: String },

    #[error("non-finite value at index {index} in {what}")]
    NonFinite { what: String, index: usize },

    #[error("cannot encode NaN")]
    NanInput,

    #[error("{value} overflows {format} (max finite {max_finite})")]
    Overflow {
        value: f64,
        format: String,
        max_finite: f64,
    },

    #[error("invalid format parameters: {0}")]
    InvalidFormat(String),

    #[error("backward called before forward on layer `{layer}`")]
    MissingCache { layer: String },

    #[error("corrupt data: {0}")]
    Corrupt(String),

    #[error("parse error at byte {offset}: {detail}")]
    Parse { offset: usize, detail: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("training diverged at step {step} (loss {loss})")]
    Diverged { step: usize, loss: f64 },

    #[error("empty input to {0}")]
    Empty(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
