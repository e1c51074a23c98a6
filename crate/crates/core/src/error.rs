use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure carries the name of the module that raised it.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{module}: invalid input: {msg}")]
    InvalidInput { module: &'static str, msg: String },

    #[error("{module}: numeric failure: {msg}")]
    NumericFailure { module: &'static str, msg: String },

    #[error("{module}: estimation failure: {msg}")]
    EstimationFailure { module: &'static str, msg: String },

    #[error("{module}: invariant violated: {msg}")]
    InvariantViolation { module: &'static str, msg: String },

    #[error("fiber_measure: {remaining} atoms remain above cap {cap}{}", cell_suffix(*.cell))]
    CapExceeded {
        cap: usize,
        remaining: usize,
        cell: Option<usize>,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

fn cell_suffix(cell: Option<usize>) -> String {
    cell.map(|c| format!(" in cell {c}")).unwrap_or_default()
}

impl Error {
    pub(crate) fn invalid(module: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidInput {
            module,
            msg: msg.into(),
        }
    }

    pub(crate) fn numeric(module: &'static str, msg: impl Into<String>) -> Self {
        Error::NumericFailure {
            module,
            msg: msg.into(),
        }
    }

    pub(crate) fn estimation(module: &'static str, msg: impl Into<String>) -> Self {
        Error::EstimationFailure {
            module,
            msg: msg.into(),
        }
    }

    pub(crate) fn violation(module: &'static str, msg: impl Into<String>) -> Self {
        Error::InvariantViolation {
            module,
            msg: msg.into(),
        }
    }

    /// Attach a grid cell index to a consolidation failure.
    pub(crate) fn in_cell(self, k: usize) -> Self {
        match self {
            Error::CapExceeded { cap, remaining, .. } => Error::CapExceeded {
                cap,
                remaining,
                cell: Some(k),
            },
            other => other,
        }
    }
}
