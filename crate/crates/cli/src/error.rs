//! Stage-tagged failures for the command-line pipeline.

use std::fmt;
use std::path::PathBuf;

use serde::Serialize;

/// Pipeline stage a failure came from. Each maps to its own exit code.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Ingest,
    Utility,
    Values,
    Selection,
    Fit,
    Consistency,
    Adversary,
    Report,
    Verify,
}

impl Stage {
    pub fn exit_code(self) -> i32 {
        match self {
            Stage::Config => 3,
            Stage::Ingest => 4,
            Stage::Utility => 5,
            Stage::Values => 6,
            Stage::Selection => 7,
            Stage::Fit => 8,
            Stage::Consistency => 9,
            Stage::Adversary => 10,
            Stage::Report => 11,
            Stage::Verify => 12,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Config => "config",
            Stage::Ingest => "ingest",
            Stage::Utility => "utility",
            Stage::Values => "values",
            Stage::Selection => "selection",
            Stage::Fit => "fit",
            Stage::Consistency => "consistency",
            Stage::Adversary => "adversary",
            Stage::Report => "report",
            Stage::Verify => "verify",
        };
        f.write_str(name)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("[{stage}] {source}")]
    Core {
        stage: Stage,
        #[source]
        source: shapsel::Error,
    },
    #[error("[{stage}] {}: {source}", path.display())]
    Io {
        stage: Stage,
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("[{stage}] {message}")]
    Invalid { stage: Stage, message: String },
}

impl CliError {
    pub fn stage(&self) -> Stage {
        match self {
            CliError::Core { stage, .. } | CliError::Io { stage, .. } | CliError::Invalid { stage, .. } => {
                *stage
            }
        }
    }

    pub fn invalid(stage: Stage, message: impl Into<String>) -> Self {
        CliError::Invalid {
            stage,
            message: message.into(),
        }
    }

    pub fn io(stage: Stage, path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            stage,
            path: path.into(),
            source,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Attaches a stage to core results.
pub trait AtStage<T> {
    fn at(self, stage: Stage) -> CliResult<T>;
}

impl<T> AtStage<T> for shapsel::Result<T> {
    fn at(self, stage: Stage) -> CliResult<T> {
        self.map_err(|source| CliError::Core { stage, source })
    }
}
