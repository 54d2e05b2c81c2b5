use std::path::PathBuf;

use ribforge_core::TensorError;
use ribforge_data::DataError;
use ribforge_models::WeightsError;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Invalid(String),
    #[error("non-finite {series} in stage {stage} at epoch {epoch}")]
    NonFinite { stage: &'static str, series: String, epoch: usize },
    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Weights(#[from] WeightsError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, PipelineError>;
