use thiserror::Error;

/// Errors raised by the numerical routines of this crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid dimension {0}: must be at least 2")]
    InvalidDimension(usize),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("point is outside the ellipsoid: |u| = {0}")]
    OutOfEllipsoid(f64),

    #[error("invalid radius {0}: radii must be strictly positive")]
    InvalidRadius(f64),

    #[error("invalid option: {0}")]
    InvalidOption(String),

    #[error("measurement design is not tomographically complete (rank {rank} < {required})")]
    IncompleteDesign { rank: usize, required: usize },

    #[error("degenerate ellipsoid: pulled-back shape matrix is singular")]
    DegenerateEllipsoid,

    #[error("invalid shot count {0}")]
    InvalidShots(i64),

    #[error("effect {index} has spectrum outside [0, 1]")]
    InvalidEffect { index: usize },

    #[error("instance of size {size} exceeds the enumeration budget of {max}")]
    InstanceTooLarge { size: usize, max: usize },

    #[error("invalid balanced-sum instance: {0}")]
    InvalidInstance(String),

    #[error("witness input is not a balanced-sum partition of the instance")]
    InvalidWitnessInput,

    #[error("vector has squared norm {found}, expected {expected}")]
    WrongNorm { expected: f64, found: f64 },

    #[error("optimizer could not resolve the containment gap (best margin {margin:e})")]
    ResolutionFailure { margin: f64 },

    #[error("requested accuracy {0:e} is below attainable double precision")]
    PrecisionUnreachable(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no PSD samples among {samples}; normalization constant is at least {lower_bound}")]
    NormalizationUnresolvable { samples: usize, lower_bound: f64 },

    #[error("lemma inapplicable: {0}")]
    LemmaInapplicable(String),

    #[error("insufficient PSD samples: {0}")]
    InsufficientSamples(usize),

    #[error("iteration failed to converge: {0}")]
    ConvergenceFailure(String),
}

impl Error {
    /// Stable machine-readable tag used in JSON error objects.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidDimension(_) => "invalid-dimension",
            Error::DimensionMismatch { .. } => "dimension-mismatch",
            Error::InvalidInput(_) => "invalid-input",
            Error::OutOfEllipsoid(_) => "out-of-ellipsoid",
            Error::InvalidRadius(_) => "invalid-radius",
            Error::InvalidOption(_) => "invalid-option",
            Error::IncompleteDesign { .. } => "incomplete-design",
            Error::DegenerateEllipsoid => "degenerate-ellipsoid",
            Error::InvalidShots(_) => "invalid-shots",
            Error::InvalidEffect { .. } => "invalid-effect",
            Error::InstanceTooLarge { .. } => "instance-too-large",
            Error::InvalidInstance(_) => "invalid-instance",
            Error::InvalidWitnessInput => "invalid-witness-input",
            Error::WrongNorm { .. } => "wrong-norm",
            Error::ResolutionFailure { .. } => "resolution-failure",
            Error::PrecisionUnreachable(_) => "precision-unreachable",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::NormalizationUnresolvable { .. } => "normalization-unresolvable",
            Error::LemmaInapplicable(_) => "lemma-inapplicable",
            Error::InsufficientSamples(_) => "insufficient-samples",
            Error::ConvergenceFailure(_) => "convergence-failure",
        }
    }

    /// True for failures of the numerics rather than of the caller's input.
    pub fn is_numeric_failure(&self) -> bool {
        matches!(
            self,
            Error::ResolutionFailure { .. }
                | Error::ConvergenceFailure(_)
                | Error::NormalizationUnresolvable { .. }
                | Error::InsufficientSamples(_)
                | Error::DegenerateEllipsoid
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
