use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A data file could not be interpreted. `row` is the 1-based data row
    /// (the header is row 0).
    #[error("row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("column `{0}` has zero sample variance")]
    ZeroVariance(String),

    #[error("invalid propensity `{0}`")]
    Propensity(String),

    #[error("no feasible perfect matching: entity {entity} cannot be paired")]
    Infeasible { entity: usize },

    #[error("union group {group} has {treated} treated and {control} control units, need at least 2 of each")]
    DegenerateUnion {
        group: usize,
        treated: usize,
        control: usize,
    },

    #[error("budget infeasible: {0}")]
    Budget(String),

    #[error("{0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
