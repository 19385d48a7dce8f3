use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("observation {observation} is impossible under action {action} from the given belief")]
    ImpossibleObservation { action: usize, observation: usize },

    #[error("evidence has zero likelihood under the propagated belief")]
    ImpossibleEvidence,

    #[error("alpha-vector set is empty")]
    UninitializedPolicy,

    #[error("invalid belief: {0}")]
    InvalidBelief(String),

    #[error("index out of range: {what} {index} (limit {limit})")]
    OutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("effective sample size {ess:.1} below floor {floor:.1}")]
    DegenerateConditioning { ess: f64, floor: f64 },

    #[error("action unsupported for this model: {0}")]
    UnsupportedAction(String),

    #[error("state budget exceeded: model needs {required} states, budget is {budget}")]
    StateBudget { required: usize, budget: usize },

    #[error("value iteration diverged: {0}")]
    Divergent(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("policy chose invalid group {group} in episode {episode}, year {year}")]
    InvalidPolicyAction {
        group: usize,
        episode: usize,
        year: usize,
    },

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("serialization error: {0}")]
    Serialization(String),
}

pub type Result<T> = std::result::Result<T, Error>;
