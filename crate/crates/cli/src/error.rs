use std::path::Path;

use eventvad::evaluation::EvalError;
use eventvad::features::FeatureError;
use thiserror::Error;

/// Failure of a subcommand, mapped onto the process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad input file, bad configuration or any other contract violation.
    #[error("{0}")]
    Input(String),
    /// The scorer could not be reached.
    #[error("{0}")]
    Scorer(String),
    /// Evaluation labels contain only one class.
    #[error("{0}")]
    Degenerate(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Scorer(_) => 3,
            CliError::Degenerate(_) => 4,
        }
    }

    pub fn bad_path(path: &Path, reason: &str) -> Self {
        CliError::Input(format!("BadPath: {}: {reason}", path.display()))
    }

    pub fn features(path: &Path, err: FeatureError) -> Self {
        match err {
            FeatureError::Io(e) => Self::bad_path(path, &e.to_string()),
            other => CliError::Input(format!("{}: {other}", path.display())),
        }
    }

    pub fn eval(context: &Path, err: EvalError) -> Self {
        match err {
            EvalError::DegenerateLabels => CliError::Degenerate(format!(
                "DegenerateLabels: {}: every evaluated frame has the same label",
                context.display()
            )),
            EvalError::Io(e) => Self::bad_path(context, &e.to_string()),
            other => CliError::Input(format!("{}: {other}", context.display())),
        }
    }

    pub fn write(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Input(format!("cannot write {}: {err}", path.display()))
    }
}
