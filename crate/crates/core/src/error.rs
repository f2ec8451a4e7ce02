use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("{path}: missing column `{column}`")]
    MissingColumn { path: String, column: String },

    #[error("{path}: row {row}, column `{column}`: {message}")]
    Cell {
        path: String,
        row: usize,
        column: String,
        message: String,
    },

    #[error("{path}: file contains no data rows")]
    EmptyFile { path: String },

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("covariate dimension mismatch: non-probability sample has q={nonprob}, probability sample has q={prob}")]
    DimensionMismatch { nonprob: usize, prob: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("constraint infeasible: {0}")]
    Infeasible(String),

    #[error("{routine} did not converge after {iterations} iterations")]
    NonConvergence {
        routine: &'static str,
        iterations: usize,
    },

    #[error("{0}: coefficients diverged (separation or no finite solution)")]
    Separation(&'static str),

    #[error("{0}: design matrix is rank deficient")]
    RankDeficient(&'static str),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("{failed} of {total} bootstrap replicates failed (limit 10%)")]
    TooManyFailures { failed: usize, total: usize },
}

impl Error {
    /// Input and configuration problems, as opposed to numerical failures.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Io(_)
                | Error::Csv(_)
                | Error::MissingColumn { .. }
                | Error::Cell { .. }
                | Error::EmptyFile { .. }
                | Error::Validation(_)
                | Error::DimensionMismatch { .. }
                | Error::Config(_)
        )
    }
}
