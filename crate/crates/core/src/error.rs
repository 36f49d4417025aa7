use thiserror::Error;

/// Errors raised by the library. Each variant maps to a stable machine code via [`Error::code`].
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("column {0} has zero variance")]
    ConstantColumn(usize),
    #[error("scores must be standardized first")]
    NotStandardized,
    #[error("matrix is not symmetric")]
    NotSymmetric,
    #[error("eigendecomposition produced non-finite values")]
    NonFiniteSpectrum,
    #[error("variance is zero or below 1e-12")]
    ZeroVariance,
    #[error("weight denominator {value} is not above 1e-9")]
    DegenerateDenominator { value: f64 },
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("invalid structure: {0}")]
    InvalidStructure(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("quartet indices must be pairwise distinct")]
    IndexCollision,
    #[error("need at least {needed} predictors, got {found}")]
    TooFewPredictors { needed: usize, found: usize },
    #[error("k = {k} outside 1..={m}")]
    InvalidK { k: usize, m: usize },
    #[error("gap diagnostic needs k >= 3, got {0}")]
    KTooSmall(usize),
    #[error("every covariance entry fell below the log floor")]
    NoUsableEquations,
    #[error("solver did not reach KKT tolerance after {iterations} iterations (residual {kkt})")]
    SolverDiverged { iterations: usize, kkt: f64 },
    #[error("eigendecomposition failed")]
    EigenFailure,
    #[error("singular value decomposition failed")]
    SvdFailure,
    #[error("no convergence after {iterations} iterations")]
    NonConvergence { iterations: usize },
    #[error("ground truth is only available for simulated data")]
    TruthUnavailable,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("labels contain a single class")]
    SingleClass,
    #[error("labels contain no positives")]
    NoPositives,
    #[error("need at least {needed} samples, got {found}")]
    TooFewSamples { needed: usize, found: usize },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Stable snake-case identifier for machine consumption.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidShape(_) => "invalid_shape",
            Error::NonFinite { .. } => "non_finite",
            Error::ConstantColumn(_) => "constant_column",
            Error::NotStandardized => "not_standardized",
            Error::NotSymmetric => "not_symmetric",
            Error::NonFiniteSpectrum => "non_finite_spectrum",
            Error::ZeroVariance => "zero_variance",
            Error::DegenerateDenominator { .. } => "degenerate_denominator",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::InvalidStructure(_) => "invalid_structure",
            Error::InvalidParams(_) => "invalid_params",
            Error::IndexCollision => "index_collision",
            Error::TooFewPredictors { .. } => "too_few_predictors",
            Error::InvalidK { .. } => "invalid_k",
            Error::KTooSmall(_) => "k_too_small",
            Error::NoUsableEquations => "no_usable_equations",
            Error::SolverDiverged { .. } => "solver_diverged",
            Error::EigenFailure => "eigen_failure",
            Error::SvdFailure => "svd_failure",
            Error::NonConvergence { .. } => "non_convergence",
            Error::TruthUnavailable => "truth_unavailable",
            Error::InvalidConfig(_) => "invalid_config",
            Error::SingleClass => "single_class",
            Error::NoPositives => "no_positives",
            Error::TooFewSamples { .. } => "too_few_samples",
            Error::Parse { .. } => "parse_error",
            Error::Io(_) => "io_error",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
