// SPDX-License-Identifier: Apache-2.0

use thiserror::Error;

pub type Result<T> = std::result::Result<T, GbcError>;

#[derive(Debug, Error)]
pub enum GbcError {
    #[error("cycle detected through edge {from} -> {to}")]
    CycleDetected { from: String, to: String },

    #[error("unknown node id `{0}`")]
    UnknownNode(String),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("template error in block {block}, field `{field}`: {message}")]
    Template {
        block: usize,
        field: &'static str,
        message: String,
    },

    #[error("label `{label}` does not occur in caption `{caption}`")]
    LabelNotFound { label: String, caption: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    #[error("need at least 2 boxes, got {0}")]
    TooFewBoxes(usize),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error("filtering would drop the root node `{0}`")]
    RootFiltered(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl GbcError {
    pub(crate) fn invalid(report: &crate::validate::ValidationReport) -> Self {
        GbcError::InvalidGraph(report.summary())
    }
}
