use std::path::PathBuf;

/// Errors raised anywhere in the whitening and evaluation pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid correlation coefficient {0}: must lie in [-1, 1]")]
    InvalidCorrelation(f64),

    #[error("regularization weight alpha = {0} is outside [0, 1]")]
    InvalidAlpha(f64),

    #[error("invalid manifest: {context}: {message}")]
    Manifest { context: String, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: expected {expected}, found {found}")]
    Shape { expected: String, found: String },

    #[error("column `{0}` is constant on the training rows")]
    ConstantColumn(String),

    #[error("design matrix is rank deficient; collinear columns: {}", .0.join(", "))]
    RankDeficient(Vec<String>),

    #[error("categorical column `{column}` has level `{level}` that was not seen during fitting")]
    UnseenLevel { column: String, level: String },

    #[error("input is not standardized: {0}")]
    NotStandardized(String),

    #[error("not enough rows: need at least {needed}, found {found}")]
    TooFewRows { needed: usize, found: usize },

    #[error("labels contain a single class; both classes are required")]
    SingleClass,

    #[error("class {class} has {count} members, fewer than the {folds} folds requested")]
    ClassTooSmall {
        class: u8,
        count: usize,
        folds: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("weight vector is in {found} space, expected {expected} space")]
    WrongSpace {
        expected: &'static str,
        found: &'static str,
    },

    #[error("cohort specification is invalid: {0}")]
    InvalidCohort(String),

    #[error("implied within-region correlation matrix is not positive definite (smallest eigenvalue {0})")]
    NotPositiveDefinite(f64),

    #[error("reports were computed on different fold assignments")]
    FoldMismatch,

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("table: {0}")]
    Table(String),

    #[error("artifact format: {0}")]
    Artifact(String),

    #[error("results directory {path} is incomplete; missing {}", .missing.join(", "))]
    MissingResults { path: PathBuf, missing: Vec<String> },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Whether the error stems from user-supplied configuration or input
    /// validation, as opposed to a failure while computing.
    pub fn is_config_error(&self) -> bool {
        match self {
            Error::InvalidAlpha(_)
            | Error::Manifest { .. }
            | Error::Config(_)
            | Error::InvalidCohort(_)
            | Error::NotPositiveDefinite(_)
            | Error::Table(_)
            | Error::Artifact(_)
            | Error::MissingResults { .. } => true,
            Error::Fold { source, .. } => source.is_config_error(),
            _ => false,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_fold(self, fold: usize) -> Self {
        Error::Fold {
            fold,
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
