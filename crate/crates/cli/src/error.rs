use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

/// Failures of the runner, each mapped to a process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("numerical blowup in {phase} (chain {chain:?}, iteration {iteration}): {detail}")]
    Blowup {
        phase: String,
        chain: Option<usize>,
        iteration: u64,
        iterate: Vec<f64>,
        detail: String,
    },

    #[error("filesystem error at {}: {source}", path.display())]
    Fs {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Failed(String),
}

pub const EXIT_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_BLOWUP: i32 = 3;
pub const EXIT_FS: i32 = 4;

impl CliError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn fs(path: &Path, source: std::io::Error) -> Self {
        CliError::Fs {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => EXIT_CONFIG,
            CliError::Blowup { .. } => EXIT_BLOWUP,
            CliError::Fs { .. } => EXIT_FS,
            CliError::Failed(_) => EXIT_FAILED,
        }
    }

    /// Errors raised while checking a config: everything but blowups is a
    /// schema violation, attributed to `field` unless the error names one.
    pub fn from_validation(err: annealed_posterior::Error, field: &str) -> Self {
        use annealed_posterior::Error as E;
        match err {
            E::Config { field: f, message } => CliError::config(join_field(field, &f), message),
            E::NumericalBlowup { .. } => CliError::from_run(err),
            other => CliError::config(field, other.to_string()),
        }
    }

    /// Errors raised while a run is under way.
    pub fn from_run(err: annealed_posterior::Error) -> Self {
        use annealed_posterior::Error as E;
        match err {
            E::NumericalBlowup {
                phase,
                chain,
                iteration,
                iterate,
                detail,
            } => CliError::Blowup {
                phase: phase.to_string(),
                chain,
                iteration,
                iterate,
                detail,
            },
            E::Config { field, message } => CliError::Config { field, message },
            other => CliError::Failed(other.to_string()),
        }
    }

    pub fn record(&self) -> ErrorRecord {
        let mut rec = ErrorRecord {
            error: match self {
                CliError::Config { .. } => "config",
                CliError::Blowup { .. } => "numerical_blowup",
                CliError::Fs { .. } => "filesystem",
                CliError::Failed(_) => "failed",
            }
            .to_string(),
            exit_code: self.exit_code(),
            message: self.to_string(),
            field: None,
            phase: None,
            chain: None,
            iteration: None,
            iterate: None,
            path: None,
        };
        match self {
            CliError::Config { field, .. } => rec.field = Some(field.clone()),
            CliError::Blowup {
                phase,
                chain,
                iteration,
                iterate,
                ..
            } => {
                rec.phase = Some(phase.clone());
                rec.chain = *chain;
                rec.iteration = Some(*iteration);
                rec.iterate = Some(iterate.clone());
            }
            CliError::Fs { path, .. } => rec.path = Some(path.display().to_string()),
            CliError::Failed(_) => {}
        }
        rec
    }
}

fn join_field(prefix: &str, field: &str) -> String {
    if prefix.is_empty() {
        field.to_string()
    } else {
        format!("{prefix}.{field}")
    }
}

/// Machine-readable failure, printed on stderr and stored in manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub error: String,
    pub exit_code: i32,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iteration: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterate: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}
