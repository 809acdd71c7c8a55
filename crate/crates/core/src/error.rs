use thiserror::Error;

#[derive(Debug, Error)]
pub enum EioError {
    #[error("singular or indefinite block: {block}")]
    Singular { block: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("infeasible parameter: {0}")]
    Infeasible(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("identifiability margin violated: {0}")]
    Margin(String),

    #[error("no converged fits: {0}")]
    NotConverged(String),

    #[error("quadrature failed: {0}")]
    Quadrature(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl EioError {
    pub fn singular(block: impl Into<String>) -> Self {
        EioError::Singular {
            block: block.into(),
        }
    }

    /// True for errors caused by malformed user input rather than numerical failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            EioError::Dimension(_)
                | EioError::Invalid(_)
                | EioError::Parse { .. }
                | EioError::Json(_)
                | EioError::Infeasible(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, EioError>;
