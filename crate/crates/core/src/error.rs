use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse failure classes, used for process exit codes and FFI status codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Input = 1,
    Infeasible = 2,
    Numerical = 3,
    Internal = 4,
}

impl ErrorCategory {
    pub fn exit_code(self) -> i32 {
        self as i32
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("unbalanced panel: no observation for unit `{unit}` in period `{period}`")]
    Unbalanced { unit: String, period: String },

    #[error("duplicate observation for unit `{unit}` in period `{period}`")]
    Duplicate { unit: String, period: String },

    #[error("parse error at line {line}, column `{column}`: `{value}` is not a finite number")]
    Parse {
        line: u64,
        column: String,
        value: String,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("{requested} breaks requested but trimming {epsilon} admits at most {max}")]
    Capacity {
        requested: usize,
        max: usize,
        epsilon: f64,
    },

    #[error("no admissible break configuration: {0}")]
    Infeasible(String),

    #[error(
        "cross-section averages are ill-conditioned (reciprocal condition {rcond:.3e}); \
         suspect columns: {}", columns.join(", ")
    )]
    IllConditioned { rcond: f64, columns: Vec<String> },

    #[error(
        "{what} is not positive definite after defactoring (smallest scaled eigenvalue {min_eigen:.3e}); \
         the regressors lack the variation required for estimation"
    )]
    Collinear { what: String, min_eigen: f64 },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("long-run covariance is not positive semidefinite (smallest eigenvalue {0:.3e})")]
    NotPsd(f64),

    #[error("no critical values for {0}; generate them with `panelbreak cv simulate`")]
    MissingCriticalValue(String),

    #[error("break {index} is too weak to localize (Δ'ΩΔ = {value:.3e})")]
    WeakBreak { index: usize, value: f64 },

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Unbalanced { .. }
            | Error::Duplicate { .. }
            | Error::Parse { .. }
            | Error::Schema(_)
            | Error::InvalidArgument(_)
            | Error::Config(_)
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Json(_)
            | Error::MissingCriticalValue(_) => ErrorCategory::Input,
            Error::Capacity { .. } | Error::Infeasible(_) | Error::WeakBreak { .. } => {
                ErrorCategory::Infeasible
            }
            Error::IllConditioned { .. }
            | Error::Collinear { .. }
            | Error::Singular(_)
            | Error::NotPsd(_) => ErrorCategory::Numerical,
            Error::Internal(_) => ErrorCategory::Internal,
        }
    }
}
