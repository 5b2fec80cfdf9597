use thiserror::Error;

/// Errors raised across the calibration pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("expansions do not share a basis")]
    BasisMismatch,

    #[error("degenerate expansion: total variance is zero")]
    DegenerateExpansion,

    #[error("degenerate predictive variance at location {index}")]
    DegeneratePredictiveVariance { index: usize },

    #[error("degenerate marginal at location {index}: zero kernel bandwidth")]
    DegenerateMarginal { index: usize },

    #[error("covariance is not positive definite{}", if *.singular { " (singular)" } else { "" })]
    NotPositiveDefinite { singular: bool },

    #[error("ill-posed design: condition number estimate {condition:.3e}")]
    IllPosedDesign { condition: f64 },

    #[error("support violation: {0}")]
    SupportViolation(String),

    #[error("infeasible start: log-posterior at the initial point is {0}")]
    InfeasibleStart(f64),

    #[error("model evaluation failed at quadrature node {node}: {message}")]
    ModelEvaluation { node: usize, message: String },

    #[error("invalid value for `{field}`: {message}")]
    InvalidConfig { field: String, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("empty chain")]
    EmptyChain,

    #[error("unknown model id `{0}`")]
    UnknownModel(String),

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
