//! Maps failures onto exit codes: 1 usage/validation, 2 verification, 3 I/O.

use std::path::Path;

use relight::checkpoint::CheckpointError;
use relight::dataio::DataError;
use relight::metrics::MetricError;
use relight::network::NetError;
use relight::pipeline::PipelineError;
use relight::scenegen::RenderError;
use relight::solarpos::SolarError;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub err: anyhow::Error,
}

impl CliError {
    pub fn usage(err: anyhow::Error) -> Self {
        Self { code: 1, err }
    }

    pub fn verification(err: anyhow::Error) -> Self {
        Self { code: 2, err }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self {
            code: 3,
            err: anyhow::anyhow!("{}: {e}", path.display()),
        }
    }
}

pub trait ExitClass {
    fn exit_code(&self) -> u8;
}

impl ExitClass for DataError {
    fn exit_code(&self) -> u8 {
        match self {
            DataError::Io { .. } | DataError::Png { .. } | DataError::Manifest { .. } | DataError::MissingFile { .. } => 3,
            _ => 1,
        }
    }
}

impl ExitClass for CheckpointError {
    fn exit_code(&self) -> u8 {
        match self {
            CheckpointError::Io { .. }
            | CheckpointError::BadMagic
            | CheckpointError::Corrupt(_)
            | CheckpointError::UnsupportedVersion(_) => 3,
            _ => 1,
        }
    }
}

impl ExitClass for PipelineError {
    fn exit_code(&self) -> u8 {
        match self {
            PipelineError::Data(e) => e.exit_code(),
            PipelineError::Checkpoint(e) => e.exit_code(),
            _ => 1,
        }
    }
}

impl ExitClass for MetricError {
    fn exit_code(&self) -> u8 {
        match self {
            MetricError::Data(e) => e.exit_code(),
            _ => 1,
        }
    }
}

impl ExitClass for RenderError {
    fn exit_code(&self) -> u8 {
        match self {
            RenderError::Data(e) => e.exit_code(),
            _ => 1,
        }
    }
}

impl ExitClass for SolarError {
    fn exit_code(&self) -> u8 {
        1
    }
}

impl ExitClass for NetError {
    fn exit_code(&self) -> u8 {
        1
    }
}

impl<E> From<E> for CliError
where
    E: ExitClass + std::error::Error + Send + Sync + 'static,
{
    fn from(e: E) -> Self {
        Self {
            code: e.exit_code(),
            err: e.into(),
        }
    }
}
