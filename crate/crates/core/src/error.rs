use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("index {index} out of range for length {len} ({context})")]
    Index {
        index: usize,
        len: usize,
        context: &'static str,
    },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("non-finite loss {value} at epoch {epoch}, step {step} (example {example_id})")]
    NonFinite {
        value: f64,
        epoch: usize,
        step: usize,
        example_id: String,
    },

    #[error("unknown question id {0}")]
    UnknownQuestion(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
