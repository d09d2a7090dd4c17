use alloc::string::String;

/// Errors raised by the estimators, the population calculators and the
/// design tools.
///
/// Stratum-specific failures carry the stratum label so callers can report
/// which cell of the trial is degenerate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dataset has no units")]
    EmptyDataset,
    #[error("unit {index}: {reason}")]
    InvalidUnit { index: usize, reason: &'static str },
    #[error("stratum {0:?} has no image under the relabeling")]
    UnmappedStratum(String),
    #[error("auxiliary labels do not refine the strata: fine label {0:?} spans several strata")]
    NotARefinement(String),
    #[error("dataset has no auxiliary stratum column")]
    MissingAuxiliary,
    #[error("treatment propensity for stratum {stratum:?} is {value}, outside (0, 1)")]
    InvalidPropensity { stratum: String, value: f64 },
    #[error("tau for stratum {stratum:?} is {value}, outside [0, 1]")]
    InvalidTau { stratum: String, value: f64 },
    #[error("stratum {0:?} has an empty treatment or control arm")]
    EmptyArm(String),
    #[error("stratum {0:?} has a non-positive first stage")]
    WeakFirstStage(String),
    #[error("estimated complier share is not positive")]
    NoCompliers,
    #[error("regression denominator is zero")]
    SingularDenominator,
    #[error("stratum {0:?} has no compliers in the population model")]
    DegenerateComplier(String),
    #[error("invalid model specification: {0}")]
    InvalidSpec(String),
    #[error("unknown built-in design {0}; expected 1..=4")]
    UnknownDesign(u32),
    #[error("variance must be positive, got {0}")]
    NonpositiveVariance(f64),
    #[error("variance estimate must be positive, got {0}")]
    ZeroVariance(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = core::result::Result<T, Error>;
