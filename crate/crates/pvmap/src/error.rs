use std::path::{Path, PathBuf};

use pvmap_core::Error as CoreError;

/// Failures of the command-line driver, grouped by exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {reason}")]
    Input { path: PathBuf, reason: String },

    #[error("{0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Pipeline(#[from] CoreError),

    /// Irreparable structure found while running with `--strict`.
    #[error("{0}")]
    Inconsistent(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn input(path: &Path, reason: impl Into<String>) -> Self {
        CliError::Input {
            path: path.to_path_buf(),
            reason: reason.into(),
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 1 for bad input, 2 for an inconsistent plant structure, 3 for
    /// internal failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input { .. } | CliError::Config(_) => 1,
            CliError::Io { source, .. } => match source.kind() {
                std::io::ErrorKind::NotFound | std::io::ErrorKind::InvalidData => 1,
                _ => 3,
            },
            CliError::Inconsistent(_) => 2,
            CliError::Pipeline(e) => match e.root() {
                CoreError::StructuralConflict { .. } => 2,
                CoreError::Invariant(_) => 3,
                _ => 1,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        let nf = std::io::Error::from(std::io::ErrorKind::NotFound);
        assert_eq!(CliError::io(Path::new("a"), nf).exit_code(), 1);
        let denied = std::io::Error::from(std::io::ErrorKind::PermissionDenied);
        assert_eq!(CliError::io(Path::new("a"), denied).exit_code(), 3);
        assert_eq!(CliError::Config("x".into()).exit_code(), 1);
        assert_eq!(CliError::Inconsistent("x".into()).exit_code(), 2);
        let conflict = CoreError::StructuralConflict {
            frame_id: "f".into(),
            rows: vec![1],
        }
        .in_stage("infer", Some("f"));
        assert_eq!(CliError::from(conflict).exit_code(), 2);
        assert_eq!(CliError::from(CoreError::Invariant("x".into()).in_stage("optimize", None)).exit_code(), 3);
        assert_eq!(CliError::from(CoreError::Empty("cloud")).exit_code(), 1);
    }
}
