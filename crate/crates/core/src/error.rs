//! Crate-wide error type.

use thiserror::Error;

/// A background-knowledge constraint set that cannot be satisfied on a graph.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct ViolationReport {
    /// One entry per unsatisfiable constraint, e.g. "required edge A -> B creates a cycle".
    pub entries: Vec<String>,
}

impl std::fmt::Display for ViolationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.entries.join("; "))
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("unknown node: {0}")]
    UnknownNode(String),

    #[error("graph error: {0}")]
    Graph(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("insufficient sample: {0}")]
    InsufficientSample(String),

    #[error("unsatisfiable background knowledge: {0}")]
    Knowledge(ViolationReport),

    #[error("positivity violation: {0}")]
    Positivity(String),

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
