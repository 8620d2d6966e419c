use std::path::Path;

use muvfs_core::checkpoint::CheckpointError;
use muvfs_core::contrastive::ContrastiveError;
use muvfs_core::metalearn::MetaError;
use muvfs_core::mining::MiningError;
use muvfs_core::synthvid::{SynthError, TensorFileError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Verification(_) | CliError::Failed(_) => 1,
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m)
            | CliError::Io(m)
            | CliError::Verification(m)
            | CliError::Failed(m) => m,
        }
    }
}

impl From<TensorFileError> for CliError {
    fn from(e: TensorFileError) -> Self {
        match e {
            TensorFileError::NonFinite => CliError::Failed(e.to_string()),
            _ => CliError::Io(e.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Config(m) => CliError::Config(m),
            SynthError::File(f) => f.into(),
            SynthError::Io { .. } | SynthError::Manifest(_) => CliError::Io(e.to_string()),
            _ => CliError::Failed(e.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::File(f) => f.into(),
            _ => CliError::Io(e.to_string()),
        }
    }
}

impl From<MiningError> for CliError {
    fn from(e: MiningError) -> Self {
        match e {
            MiningError::Config(m) => CliError::Config(m),
            MiningError::Synth(s) => s.into(),
            _ => CliError::Failed(e.to_string()),
        }
    }
}

impl From<ContrastiveError> for CliError {
    fn from(e: ContrastiveError) -> Self {
        match e {
            ContrastiveError::Config(m) => CliError::Config(m),
            ContrastiveError::Synth(s) => s.into(),
            _ => CliError::Failed(e.to_string()),
        }
    }
}

impl From<MetaError> for CliError {
    fn from(e: MetaError) -> Self {
        match e {
            MetaError::Config(m) => CliError::Config(m),
            MetaError::Mining(m) => m.into(),
            _ => CliError::Failed(e.to_string()),
        }
    }
}
