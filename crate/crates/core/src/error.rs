use thiserror::Error;

use crate::matnorm::{MatNormParams, TensorNormParams};
use crate::qp::SvmDualSolution;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("sample too small: n = {n} but flip-flop needs n >= max(d1/d2, d2/d1) + 1 = {required}")]
    SampleTooSmall { n: usize, required: f64 },

    #[error("singular covariance: {0}")]
    SingularCovariance(String),

    #[error("matrix is not symmetric (relative asymmetry {0:.3e})")]
    NotSymmetric(f64),

    #[error("matrix is not positive definite (smallest eigenvalue {0:.3e})")]
    NotPositiveDefinite(f64),

    #[error("flip-flop did not converge in {} sweeps", .0.iterations)]
    FlipFlopNotConverged(Box<MatNormParams>),

    #[error("tensor flip-flop did not converge in {} sweeps", .0.iterations)]
    TensorFlipFlopNotConverged(Box<TensorNormParams>),

    #[error("labels must contain both classes")]
    InfeasibleLabels,

    #[error("SMO did not reach the KKT tolerance (residual {:.3e} after {} updates)", .0.kkt_residual, .0.iterations)]
    QpNotConverged(Box<SvmDualSolution>),

    #[error("degenerate direction: {0}")]
    DegenerateDirection(String),

    #[error("fewer than one usable slice after dropping single-class slices")]
    TooFewSlices,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures of the numerics (as opposed to bad input or configuration).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SingularCovariance(_)
                | Error::NotPositiveDefinite(_)
                | Error::FlipFlopNotConverged(_)
                | Error::TensorFlipFlopNotConverged(_)
                | Error::QpNotConverged(_)
                | Error::DegenerateDirection(_)
        )
    }

    /// Short machine-friendly tag used in benchmark status columns.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::EmptyDataset => "empty_dataset",
            Error::SampleTooSmall { .. } => "sample_too_small",
            Error::SingularCovariance(_) => "singular_covariance",
            Error::NotSymmetric(_) => "not_symmetric",
            Error::NotPositiveDefinite(_) => "not_positive_definite",
            Error::FlipFlopNotConverged(_) | Error::TensorFlipFlopNotConverged(_) => {
                "flipflop_not_converged"
            }
            Error::InfeasibleLabels => "infeasible_labels",
            Error::QpNotConverged(_) => "qp_not_converged",
            Error::DegenerateDirection(_) => "degenerate_direction",
            Error::TooFewSlices => "too_few_slices",
            Error::InvalidConfig(_) => "invalid_config",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
