use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("differentiation failed at component {component}: {detail}")]
    DifferentiationFailure { component: usize, detail: String },

    #[error("integration diverged at t = {time}")]
    Divergence { time: f64 },

    #[error("iterate diverged at step {step}")]
    DivergedAtStep { step: usize },

    #[error("field of kind {0} requires an anchor")]
    MissingAnchor(&'static str),

    #[error("probability {value} outside the open interval (0, 1)")]
    Domain { value: f64 },

    #[error("permutation enumeration limited to n <= {max}, got {n}")]
    TooManyPermutations { n: usize, max: usize },

    #[error("slope fit needs at least {required} valid points, got {found}")]
    InsufficientPoints { required: usize, found: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
