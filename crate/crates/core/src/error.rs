use thiserror::Error;

/// Error type shared across the crate.
#[derive(Debug, Error)]
pub enum KedrlError {
    /// Bad arguments, shape mismatches, invalid configuration.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Out-of-domain parameter (e.g. Lipschitz constant for nu <= 1).
    #[error("domain error: {0}")]
    Domain(String),

    /// Factorization failures, non-finite values, PSD violations.
    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("format error in {path}: {msg}")]
    Format { path: String, msg: String },
}

impl KedrlError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        KedrlError::InvalidInput(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        KedrlError::Numerical(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        KedrlError::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<String>, msg: impl Into<String>) -> Self {
        KedrlError::Format { path: path.into(), msg: msg.into() }
    }

    /// Process exit code for the CLI: 2 validation, 3 numerical, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            KedrlError::InvalidInput(_) | KedrlError::Domain(_) => 2,
            KedrlError::Numerical(_) => 3,
            KedrlError::Io { .. } | KedrlError::Format { .. } => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, KedrlError>;
