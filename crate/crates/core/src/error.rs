use alloc::string::String;

/// Errors produced by the core pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("feature {index} is not finite")]
    NonFinite { index: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("schema mismatch: bundle dimension {bundle}, expected {expected}")]
    SchemaMismatch { bundle: usize, expected: usize },
    #[error("invalid identifier {0:?} (allowed: [A-Za-z0-9_-]+)")]
    InvalidId(String),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("invalid rule: {0}")]
    InvalidRule(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no positive samples")]
    NoPositives,
    #[error("no negative samples")]
    NoNegatives,
    #[error("training data contains a single class")]
    SingleClass,
    #[error("probability {0} outside [0, 1]")]
    Domain(f64),
    #[error("records out of order at position {0}")]
    Order(usize),
    #[error("malformed {what}: {detail}")]
    Syntax { what: &'static str, detail: String },
}

pub type Result<T> = core::result::Result<T, Error>;
