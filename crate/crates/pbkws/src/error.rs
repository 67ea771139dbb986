use std::io;
use std::path::{Path, PathBuf};

use pbkws_core::classify::ClassifyError;
use pbkws_core::dataset::DatasetError;
use pbkws_core::encoder::EncoderError;
use pbkws_core::losses::LossError;
use pbkws_core::metrics::MetricsError;
use pbkws_core::synth::SynthError;
use pbkws_core::trainer::TrainError;
use thiserror::Error;

use crate::formats::FormatError;
use crate::manifest::ManifestError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: {source}", path.display())]
    Format { path: PathBuf, source: FormatError },
    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{}: {source}", path.display())]
    Manifest { path: PathBuf, source: ManifestError },
    #[error("{}:{line}: {message}", path.display())]
    Predictions {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("utterance {index}: predicted {predicted:?}, gold {gold:?}")]
    UttIdMismatch {
        index: usize,
        predicted: String,
        gold: String,
    },
}

impl Error {
    pub fn io(path: &Path, source: io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn format(path: &Path, source: FormatError) -> Self {
        Error::Format {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn json(path: &Path, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 1 for usage errors, 3 for numeric failures, 2 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Usage(_) => 1,
            Error::Train(TrainError::NonFiniteLoss { .. }) => 3,
            Error::Train(TrainError::Loss(LossError::Ctc(_) | LossError::NonFiniteLogits)) => 3,
            _ => 2,
        }
    }
}
