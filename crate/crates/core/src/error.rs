use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("symbol {symbol} has zero pre-change probability but positive post-change probability")]
    InfiniteDivergence { symbol: usize },

    #[error("malformed burst bit sequence `{0}`")]
    MalformedBits(String),

    #[error("fusion input has {got} entries, expected {expected}")]
    MalformedInput { expected: usize, got: usize },

    #[error("unsupported detector configuration: {0}")]
    Unsupported(String),

    #[error("{sensors} sensors exceeds the limit of {limit} for pattern-enumerating detectors")]
    TooManySensors { sensors: usize, limit: usize },

    #[error("zero predictive probability for a message tuple")]
    DegenerateQuantizer,

    #[error("value iteration stopped after {iterations} iterations with sup-norm gap {gap:e}")]
    NotConverged { iterations: usize, gap: f64 },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
