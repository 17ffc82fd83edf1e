use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid hardware spec: {0}")]
    InvalidHardware(String),

    #[error("invalid model architecture: {0}")]
    InvalidModel(String),

    #[error("invalid draft spec: {0}")]
    InvalidDraft(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("draft KV budget {budget} exceeds available context {context}")]
    BudgetExceedsContext { budget: u64, context: u64 },

    #[error("no candidate budget fits within context {context} (budgets: {budgets:?})")]
    NoFeasibleBudget { context: u64, budgets: Vec<u64> },

    #[error("no acceptance data for method `{method}` on task `{task}`; available groups: {available}")]
    UnknownGroup {
        method: String,
        task: String,
        available: String,
    },

    #[error("{path}: line {line}: {message}")]
    Table {
        path: String,
        line: u64,
        message: String,
    },

    #[error("{}: {source}", path.display())]
    Config {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
