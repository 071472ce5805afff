use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("unknown sheet {0}")]
    UnknownSheet(u32),

    #[error("point {point:?} outside the domain of sheet {sheet}")]
    OutsideDomain { sheet: u32, point: [f64; 2] },

    #[error("sheets {0} and {1} do not define a difference field: {2}")]
    BadPair(u32, u32, String),

    #[error("degenerate critical point at {location:?} (min |eigenvalue| {min_eigenvalue:e})")]
    NonMorse {
        location: [f64; 2],
        min_eigenvalue: f64,
    },

    #[error("Morse neighborhood too large: {0}")]
    TooLarge(String),

    #[error("integration stalled near {point:?}: {reason}")]
    Stiff { point: [f64; 2], reason: String },

    #[error("flow meets the fold with contact order {order} above the chart dimension {dim}")]
    TransversalityViolation { order: usize, dim: usize },

    #[error("invalid broken flow: {0}")]
    InvalidBrokenFlow(String),

    #[error("invalid tree: {0}")]
    InvalidTree(String),

    #[error("combinatorial type mismatch: {0}")]
    GammaMismatch(String),

    #[error("inconclusive: {0}")]
    Inconclusive(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.to_string(),
        }
    }
}
