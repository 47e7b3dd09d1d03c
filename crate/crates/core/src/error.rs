use thiserror::Error;

/// Errors produced by the model, sampler and post-processing routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("NonIncreasingTimes: visit times must be strictly increasing ({0})")]
    NonIncreasingTimes(String),
    #[error("MissingTrials: binomial family requires a trials tensor")]
    MissingTrials,
    #[error("CountExceedsTrials: y={y} exceeds n={n} at (t={t}, cell={cell})")]
    CountExceedsTrials { t: usize, cell: usize, y: f64, n: f64 },
    #[error("IsolatedLocation: location {0} has no neighbours")]
    IsolatedLocation(usize),
    #[error("IndexOutOfRange: {0}")]
    IndexOutOfRange(String),
    #[error("DimensionMismatch: {0}")]
    DimensionMismatch(String),
    #[error("InvalidData: {0}")]
    InvalidData(String),
    #[error("InvalidParameter: {0}")]
    InvalidParameter(String),
    #[error("SingularPrecision: spatial precision matrix is singular")]
    SingularPrecision,
    #[error("KindMismatch: {0}")]
    KindMismatch(String),
    #[error("NonPositiveDefinite: {0}")]
    NonPositiveDefinite(String),
    #[error("DuplicateTimes: minimum gap between visit times is zero")]
    DuplicateTimes,
    #[error("IndicatorOutOfRange: factor {factor}, cell {cell}, indicator {xi} >= {atoms}")]
    IndicatorOutOfRange {
        factor: usize,
        cell: usize,
        xi: usize,
        atoms: usize,
    },
    #[error("DegenerateDenominator: 2*beta1 - beta2 (or its cross analogue) is zero")]
    DegenerateDenominator,
    #[error("NonPositiveVariance: {0}")]
    NonPositiveVariance(String),
    #[error("NonPositiveOmega: {0}")]
    NonPositiveOmega(f64),
    #[error("NonPositiveScale: {0}")]
    NonPositiveScale(String),
    #[error("DegenerateDraws: at least two retained draws are required, got {0}")]
    DegenerateDraws(usize),
    #[error("ZeroVariance: {0}")]
    ZeroVariance(String),
    #[error("DegenerateData: {0}")]
    DegenerateData(String),
    #[error("ZeroResidualVariance: cell {0} has an exact linear fit")]
    ZeroResidualVariance(usize),
    #[error("PreconditionViolation: {0}")]
    PreconditionViolation(String),
    #[error("InvariantViolation: {0}")]
    InvariantViolation(String),
    #[error("Io: {0}")]
    Io(String),
    #[error("Format: {0}")]
    Format(String),
}

impl Error {
    /// Short machine-parsable error kind, e.g. `CountExceedsTrials`.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NonIncreasingTimes(_) => "NonIncreasingTimes",
            Error::MissingTrials => "MissingTrials",
            Error::CountExceedsTrials { .. } => "CountExceedsTrials",
            Error::IsolatedLocation(_) => "IsolatedLocation",
            Error::IndexOutOfRange(_) => "IndexOutOfRange",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::InvalidData(_) => "InvalidData",
            Error::InvalidParameter(_) => "InvalidParameter",
            Error::SingularPrecision => "SingularPrecision",
            Error::KindMismatch(_) => "KindMismatch",
            Error::NonPositiveDefinite(_) => "NonPositiveDefinite",
            Error::DuplicateTimes => "DuplicateTimes",
            Error::IndicatorOutOfRange { .. } => "IndicatorOutOfRange",
            Error::DegenerateDenominator => "DegenerateDenominator",
            Error::NonPositiveVariance(_) => "NonPositiveVariance",
            Error::NonPositiveOmega(_) => "NonPositiveOmega",
            Error::NonPositiveScale(_) => "NonPositiveScale",
            Error::DegenerateDraws(_) => "DegenerateDraws",
            Error::ZeroVariance(_) => "ZeroVariance",
            Error::DegenerateData(_) => "DegenerateData",
            Error::ZeroResidualVariance(_) => "ZeroResidualVariance",
            Error::PreconditionViolation(_) => "PreconditionViolation",
            Error::InvariantViolation(_) => "InvariantViolation",
            Error::Io(_) => "Io",
            Error::Format(_) => "Format",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
