//! Error classes and their exit codes.
//!
//! Failures are reported on stderr as a single JSON line:
//! `{"error":"<class>","code":<n>,"message":"..."}`.

use std::path::Path;

use tacmamba::Error;

#[derive(Debug)]
pub enum CliError {
    /// Exit 1: the run itself failed (numerics, shapes, I/O other than a missing file).
    Failed(String),
    /// Exit 2: bad command line.
    Usage(String),
    /// Exit 3: configuration or document violates its schema.
    Schema(String),
    /// Exit 4: an input file does not exist.
    Missing(String),
    /// Exit 5: file format version not supported.
    Version(String),
    /// Exit 6: binary file is corrupt or truncated.
    Corrupt(String),
    /// Exit 7: the fast loop aborted on consecutive deadline misses.
    Deadline(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            Self::Failed(_) => 1,
            Self::Usage(_) => 2,
            Self::Schema(_) => 3,
            Self::Missing(_) => 4,
            Self::Version(_) => 5,
            Self::Corrupt(_) => 6,
            Self::Deadline(_) => 7,
        }
    }

    pub fn class(&self) -> &'static str {
        match self {
            Self::Failed(_) => "failed",
            Self::Usage(_) => "usage",
            Self::Schema(_) => "schema",
            Self::Missing(_) => "missing_file",
            Self::Version(_) => "version",
            Self::Corrupt(_) => "corrupt",
            Self::Deadline(_) => "deadline",
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Self::Failed(m)
            | Self::Usage(m)
            | Self::Schema(m)
            | Self::Missing(m)
            | Self::Version(m)
            | Self::Corrupt(m)
            | Self::Deadline(m) => m,
        }
    }

    pub fn json_line(&self) -> String {
        serde_json::json!({ "error": self.class(), "code": self.code(), "message": self.message() }).to_string()
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        let msg = format!("{}: {e}", path.display());
        if e.kind() == std::io::ErrorKind::NotFound {
            Self::Missing(msg)
        } else {
            Self::Failed(msg)
        }
    }

    /// Attaches the offending path to a library error.
    pub fn at(path: &Path) -> impl FnOnce(Error) -> Self + '_ {
        move |e| match CliError::from(e) {
            CliError::Missing(_) => CliError::Missing(format!("{}: file not found", path.display())),
            other => other.prefixed(&path.display().to_string()),
        }
    }

    fn prefixed(self, p: &str) -> Self {
        let wrap = |m: String| format!("{p}: {m}");
        match self {
            Self::Failed(m) => Self::Failed(wrap(m)),
            Self::Usage(m) => Self::Usage(wrap(m)),
            Self::Schema(m) => Self::Schema(wrap(m)),
            Self::Missing(m) => Self::Missing(wrap(m)),
            Self::Version(m) => Self::Version(wrap(m)),
            Self::Corrupt(m) => Self::Corrupt(wrap(m)),
            Self::Deadline(m) => Self::Deadline(wrap(m)),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Config(_) | Error::Json(_) => Self::Schema(msg),
            Error::Version { .. } => Self::Version(msg),
            Error::Parse { .. } => Self::Corrupt(msg),
            Error::DeadlineAbort(_) => Self::Deadline(msg),
            Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => Self::Missing(msg),
            _ => Self::Failed(msg),
        }
    }
}
