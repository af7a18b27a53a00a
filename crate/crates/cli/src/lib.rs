//! Pipeline orchestration behind the `bartr` binary: configuration, log
//! ingestion, the scoring pipeline, heatmap export and the verb handlers.

pub mod app;
pub mod config;
pub mod heatmap;
pub mod pipeline;

use std::fmt;
use std::path::Path;

use bartr::session::SessionLog;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    Validation,
    Numeric,
    /// Every participant-session of a pipeline run failed.
    Total,
}

impl FailureKind {
    pub fn exit_code(self) -> u8 {
        match self {
            FailureKind::Validation => 2,
            FailureKind::Numeric => 3,
            FailureKind::Total => 4,
        }
    }
}

#[derive(Debug)]
pub struct Failure {
    pub kind: FailureKind,
    pub error: anyhow::Error,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl Failure {
    pub fn validation(msg: impl fmt::Display) -> Self {
        Failure {
            kind: FailureKind::Validation,
            error: anyhow::anyhow!("{msg}"),
        }
    }

    pub fn numeric(msg: impl fmt::Display) -> Self {
        Failure {
            kind: FailureKind::Numeric,
            error: anyhow::anyhow!("{msg}"),
        }
    }
}

pub type CliResult<T> = Result<T, Failure>;

/// Tags an error with the exit status it maps to.
pub trait Classify<T> {
    fn invalid(self) -> CliResult<T>;
    fn numeric(self) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn invalid(self) -> CliResult<T> {
        self.map_err(|e| Failure {
            kind: FailureKind::Validation,
            error: e.into(),
        })
    }

    fn numeric(self) -> CliResult<T> {
        self.map_err(|e| Failure {
            kind: FailureKind::Numeric,
            error: e.into(),
        })
    }
}

/// Reads and validates one session log file.
pub fn ingest(path: &Path) -> CliResult<SessionLog> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::validation(format!("{}: {e}", path.display())))?;
    SessionLog::from_jsonl(&text)
        .map_err(|e| Failure::validation(format!("{}: {e}", path.display())))
}

pub(crate) fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Failure::validation(format!("{}: {e}", path.display())))
}

pub(crate) fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)
            .map_err(|e| Failure::validation(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| Failure::validation(format!("{}: {e}", path.display())))
}
