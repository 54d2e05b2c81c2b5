use std::path::PathBuf;

use ribforge_data::DataError;
use ribforge_models::WeightsError;
use ribforge_pipelines::PipelineError;

pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NON_FINITE: i32 = 4;
pub const EXIT_GRADCHECK: i32 = 5;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("gradient check failed: {0}")]
    Gradcheck(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Pipeline(e.into())
    }
}

impl From<WeightsError> for CliError {
    fn from(e: WeightsError) -> Self {
        CliError::Pipeline(e.into())
    }
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Io { .. } => EXIT_IO,
            CliError::Gradcheck(_) => EXIT_GRADCHECK,
            CliError::Pipeline(p) => match p {
                PipelineError::Config(_) | PipelineError::Invalid(_) => EXIT_CONFIG,
                PipelineError::NonFinite { .. } => EXIT_NON_FINITE,
                PipelineError::Io { .. } => EXIT_IO,
                PipelineError::Data(d) => match d {
                    DataError::Config(_) | DataError::Invalid(_) | DataError::TooFewSamples { .. } => EXIT_CONFIG,
                    DataError::Io { .. } | DataError::Checksum { .. } | DataError::Format { .. } => EXIT_IO,
                },
                PipelineError::Weights(w) => match w {
                    WeightsError::Mismatch { .. } => EXIT_CONFIG,
                    _ => EXIT_IO,
                },
                PipelineError::Tensor(_) => EXIT_INTERNAL,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
