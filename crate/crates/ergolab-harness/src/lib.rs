//! Experiment runner for ergolab: TOML configuration, seeded runs, CSV/JSON outputs with a
//! manifest, and the acceptance suite behind `verify-all`.

pub mod cli;
pub mod config;
pub mod output;
pub mod recipes;
pub mod verify;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("verification failed: {0}")]
    Verification(String),
}

impl HarnessError {
    /// Process exit code of the error category.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Io(_) => 2,
            HarnessError::Numerical(_) => 3,
            HarnessError::Verification(_) => 4,
        }
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}

/// Module errors are surfaced verbatim as numerical failures.
pub(crate) fn numerical(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Numerical(e.to_string())
}
