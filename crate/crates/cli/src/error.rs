use std::path::PathBuf;

use brw_core::laws::LawError;
use thiserror::Error;

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_WARNING: u8 = 3;
pub const EXIT_RUNTIME: u8 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("bad law spec: {0}")]
    BadLawSpec(#[from] LawError),
    #[error("bad numeric argument: {0}")]
    BadNumeric(String),
    #[error("I/O error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {message}")]
    Runtime { context: &'static str, message: String },
    #[error("numerical warnings under --strict: {}", .0.join("; "))]
    Escalated(Vec<String>),
    #[error("{0} gated acceptance criteria failed")]
    CriteriaFailed(usize),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config(_) | CliError::BadLawSpec(_) | CliError::BadNumeric(_) => {
                EXIT_CONFIG
            }
            CliError::Escalated(_) => EXIT_WARNING,
            CliError::Io { .. } | CliError::Runtime { .. } | CliError::CriteriaFailed(_) => EXIT_RUNTIME,
        }
    }

    pub fn runtime(context: &'static str, err: impl std::fmt::Display) -> Self {
        CliError::Runtime {
            context,
            message: err.to_string(),
        }
    }
}
