use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("gradient column {column} has zero variance and cannot be normalized")]
    ZeroVariance { column: usize },

    #[error("length {0} is odd; real-to-complex modulation needs an even length")]
    OddDimension(usize),

    #[error("singular system in {0}; enable the minimum-norm fallback to accept a pseudo-inverse solution")]
    Singular(&'static str),

    #[error("matrix is not positive semidefinite (minimum eigenvalue {min_eigenvalue:e})")]
    NotPositiveSemidefinite { min_eigenvalue: f64 },

    #[error("per-slot step {step:.6} m exceeds the speed limit {limit:.6} m")]
    SpeedInfeasible { step: f64, limit: f64 },

    #[error("infeasible trajectory: {0}")]
    InfeasibleTrajectory(String),

    #[error("infeasible warm start: {0}")]
    InfeasibleStart(String),

    #[error("device {0} has an empty local dataset")]
    EmptyDataset(usize),
}

impl Error {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn check_len(context: &'static str, expected: usize, found: usize) -> Result<()> {
        if expected == found {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                context,
                expected,
                found,
            })
        }
    }
}
