use alloc::string::String;

/// Errors raised by the core crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: dimension mismatch: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: non-finite value")]
    NonFinite { op: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("row {row}: unknown {kind} id `{id}`")]
    DanglingNode { row: usize, kind: &'static str, id: String },

    #[error("{kind} node index {index} out of range (count {count})")]
    NodeOutOfRange { kind: &'static str, index: usize, count: usize },

    #[error("customer {customer} has {available} non-neighbor skills, {requested} requested")]
    NotEnoughNegatives { customer: usize, available: usize, requested: usize },

    #[error("no embedding for {0}")]
    MissingEmbedding(String),

    #[error("training rows contain a single class")]
    SingleClass,

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("objective is non-finite when probing parameter {param}, entry {entry}")]
    GradProbe { param: usize, entry: usize },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, detail: String) -> Error {
    Error::Shape { op, detail }
}
