use std::path::Path;

use impromptu_core::Error;
use serde::Serialize;

/// A failure with the process exit code it maps to: 2 for missing inputs,
/// 3 for invalid data or broken invariants, 4 for generation-provider
/// failures, 1 for anything else.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("missing input {path}: {reason}")]
    Missing { path: String, reason: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Core(#[from] Error),
}

#[derive(Serialize)]
struct ErrorLine<'a> {
    error: &'a str,
    code: i32,
    message: String,
}

impl CliError {
    pub fn missing(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Missing {
            path: path.display().to_string(),
            reason: e.to_string(),
        }
    }

    pub fn missing_artifact(path: &Path) -> Self {
        CliError::Missing {
            path: path.display().to_string(),
            reason: "not found (run the producing stage first)".into(),
        }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        CliError::Invalid(message.into())
    }

    pub fn code(&self) -> i32 {
        match self {
            CliError::Missing { .. } => 2,
            CliError::Invalid(_) => 3,
            CliError::Core(e) => match e {
                Error::File { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
                Error::Provider { .. } => 4,
                Error::Io(_) | Error::File { .. } => 1,
                _ => 3,
            },
        }
    }

    fn kind(&self) -> &'static str {
        match self.code() {
            2 => "missing_input",
            3 => "invariant",
            4 => "provider",
            _ => "io",
        }
    }

    /// One-line JSON rendering for stderr.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&ErrorLine {
            error: self.kind(),
            code: self.code(),
            message: self.to_string(),
        })
        .expect("error line serializes")
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        let nf = Error::File {
            path: "x".into(),
            source: std::io::Error::from(std::io::ErrorKind::NotFound),
        };
        assert_eq!(CliError::from(nf).code(), 2);
        assert_eq!(
            CliError::from(Error::Provider {
                attempts: 3,
                message: "down".into()
            })
            .code(),
            4
        );
        assert_eq!(CliError::from(Error::Invariant("x".into())).code(), 3);
        assert_eq!(CliError::invalid("bad").code(), 3);
        let line = CliError::missing_artifact(Path::new("work/ranking.jsonl")).to_json_line();
        assert!(
            line.contains(r#""code":2"#) && line.contains("ranking.jsonl"),
            "{line}"
        );
    }
}
