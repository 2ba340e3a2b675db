use thiserror::Error;

/// Errors raised across the workbench.
///
/// Variants map one-to-one onto the failure modes of the individual
/// operations, so callers (the CLI in particular) can classify them into
/// input errors and mathematical invariant failures.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("point {point:?} lies outside the interior of the domain")]
    Domain { point: Vec<f64> },

    #[error("insufficient smoothness: {0}")]
    InsufficientSmoothness(String),

    #[error("density has no Gibbs factorization (beta, H)")]
    MissingGibbsForm,

    #[error("unknown catalog example `{0}`")]
    UnknownExample(String),

    #[error("parameter out of range: {0}")]
    ParameterOutOfRange(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("order-k coefficient vanishes at {point:?}; scan other points")]
    NoViolationAtPoint { point: Vec<f64> },

    #[error("operator order {0} is at most two, nothing to violate")]
    OrderTooLow(usize),

    #[error("precondition violated: {0}")]
    PreconditionViolated(String),

    #[error("diffusion coefficient is not non-negative definite at {point:?} (min eigenvalue {min_eigenvalue:e})")]
    NonEllipticCoefficient { point: Vec<f64>, min_eigenvalue: f64 },

    #[error("off-diagonal diffusion tensors are not supported by the assembler")]
    UnsupportedTensor,

    #[error("time must be non-negative, got {0}")]
    Time(f64),

    #[error("uniformization needs {needed} terms, budget is {budget}; use time stepping")]
    TruncationBudgetExceeded { needed: usize, budget: usize },

    #[error("resolvent parameter must be positive, got {0}")]
    Spectrum(f64),

    #[error("generator has no invariant density (mass drains into absorbing states)")]
    NoInvariantDensity,

    #[error("density is positive at node {node} where the reference density vanishes")]
    SupportViolation { node: usize },

    #[error("H-functional `{0}` has no second derivative")]
    NonSmoothH(String),

    #[error("particle ensemble is empty")]
    EmptyEnsemble,

    #[error("expression error: {0}")]
    Expression(String),

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("invalid generator input: {0}")]
    Spec(String),

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl Error {
    /// Variant name, for reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain { .. } => "DomainError",
            Error::InsufficientSmoothness(_) => "InsufficientSmoothness",
            Error::MissingGibbsForm => "MissingGibbsForm",
            Error::UnknownExample(_) => "UnknownExample",
            Error::ParameterOutOfRange(_) => "ParameterOutOfRange",
            Error::Shape(_) => "ShapeError",
            Error::NoViolationAtPoint { .. } => "NoViolationAtPoint",
            Error::OrderTooLow(_) => "OrderTooLow",
            Error::PreconditionViolated(_) => "PreconditionViolated",
            Error::NonEllipticCoefficient { .. } => "NonEllipticCoefficient",
            Error::UnsupportedTensor => "UnsupportedTensor",
            Error::Time(_) => "TimeError",
            Error::TruncationBudgetExceeded { .. } => "TruncationBudgetExceeded",
            Error::Spectrum(_) => "SpectrumError",
            Error::NoInvariantDensity => "NoInvariantDensity",
            Error::SupportViolation { .. } => "SupportViolation",
            Error::NonSmoothH(_) => "NonSmoothH",
            Error::EmptyEnsemble => "EmptyEnsemble",
            Error::Expression(_) => "ExpressionError",
            Error::Grid(_) => "GridError",
            Error::Spec(_) => "SpecError",
            Error::Io(_) => "IoError",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
