use thiserror::Error;

use crate::protocol::BlockId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("block {0} does not exist in this dag")]
    InvalidBlock(BlockId),

    #[error("block {0} is hidden in this view")]
    HiddenBlock(BlockId),

    /// A dag label or structure invariant does not hold.
    #[error("dag state violation: {0}")]
    State(String),

    /// A protocol specification produced a result outside its contract.
    #[error("protocol `{protocol}` violated its contract: {message}")]
    Protocol { protocol: String, message: String },

    #[error("action {0} is not feasible in this state")]
    InfeasibleAction(String),

    #[error("exploration exceeded the state budget of {budget} states")]
    Budget { budget: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("value iteration requires an absorbing terminal state; apply the termination transform first")]
    NonTerminating,

    #[error("policy makes no long-run progress (progress rate {0:e})")]
    DegeneratePolicy(f64),

    #[error("state not found: {0}")]
    NotFound(String),

    #[error("malformed cache file: {0}")]
    Cache(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn state(msg: impl Into<String>) -> Self {
        Error::State(msg.into())
    }

    /// True for errors caused by user-supplied configuration.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::NotFound(_))
    }

    /// True for errors caused by exhausting a configured resource budget.
    pub fn is_resource(&self) -> bool {
        matches!(self, Error::Budget { .. })
    }
}
