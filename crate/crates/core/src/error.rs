use thiserror::Error;

/// One problem found while parsing or validating a scenario config.
/// `line` is 1-based and present for syntax-level issues.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigIssue {
    pub line: Option<usize>,
    pub key: Option<String>,
    pub message: String,
}

impl std::fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match (self.line, &self.key) {
            (Some(l), Some(k)) => write!(f, "line {l}: key `{k}`: {}", self.message),
            (Some(l), None) => write!(f, "line {l}: {}", self.message),
            (None, Some(k)) => write!(f, "key `{k}`: {}", self.message),
            (None, None) => write!(f, "{}", self.message),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("magnetic field model violates positivity: {0}")]
    FieldNotPositive(String),

    #[error("grid/shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("expected {expected:?}-chart distribution, got {got:?}")]
    ChartMismatch {
        expected: crate::reduced::Chart,
        got: crate::reduced::Chart,
    },

    #[error("non-finite data: {0}")]
    NonFinite(String),

    #[error(
        "solvability condition not met: {which} residual norm {norm:.3e} exceeds tolerance {tol:.3e}"
    )]
    NotSolvable { which: &'static str, norm: f64, tol: f64 },

    #[error("target chart cannot hold the support: estimated truncated mass fraction {lost:.3e}")]
    ChartTruncation { lost: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("solver aborted: {0}")]
    SolverAbort(String),

    #[error("fixed-point iteration did not converge: {0}")]
    NoConvergence(String),

    #[error("config: {}", format_issues(.0))]
    Config(Vec<ConfigIssue>),

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn format_issues(issues: &[ConfigIssue]) -> String {
    issues
        .iter()
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

pub type Result<T> = std::result::Result<T, Error>;
