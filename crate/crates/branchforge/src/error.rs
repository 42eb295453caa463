use std::path::PathBuf;

use branchforge_core::corpus::CorpusError;
use branchforge_core::eval::EvalError;
use branchforge_core::train::TrainError;

use crate::formats::FormatError;

/// Every failure surfaces as one line starting with its class name.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("CheckpointNotFound: {}", .0.display())]
    CheckpointNotFound(PathBuf),
    #[error("DataNotFound: {}", .0.display())]
    DataNotFound(PathBuf),
    #[error("UsageError: {0}")]
    Usage(String),
    #[error("IoError: {}: {msg}", path.display())]
    Io { path: PathBuf, msg: String },
    #[error("CorruptData: {0}")]
    Corrupt(String),
    #[error("SelfCheckFailed: {0} suite(s) failed")]
    SelfCheckFailed(usize),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::CheckpointNotFound(_) | CliError::Usage(_) => 2,
            _ => 1,
        }
    }

    pub fn io(path: impl Into<PathBuf>, e: impl std::fmt::Display) -> Self {
        CliError::Io { path: path.into(), msg: e.to_string() }
    }

    /// The message flattened onto a single line.
    pub fn one_line(&self) -> String {
        self.to_string().replace('\n', " ")
    }
}
