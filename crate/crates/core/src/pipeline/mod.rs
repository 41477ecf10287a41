//! End-to-end commands: featurize, train, evaluate and generate.

pub mod cache;
mod commands;
pub mod config;
pub mod dataset;
pub mod difficulty;
pub mod toy;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::audiofeat::AudioError;
use crate::beatgrid::BeatGridError;
use crate::evalmetrics::MetricError;
use crate::models::ModelError;
use crate::neural::NeuralError;
use crate::simfile::SimfileError;
use crate::tempo::TempoError;

pub use cache::FeatureCache;
pub use commands::{
    cmd_evaluate, cmd_featurize, cmd_generate, cmd_tempo, cmd_train_placement, cmd_train_selection,
    load_placement, load_selection, EvalSummary, FeaturizeSummary, Generated, TrainOutcome,
};
pub use config::{ModelScale, PipelineConfig};
pub use difficulty::{default_difficulty, plan_difficulties, DifficultyPlan};

/// Process exit codes of the command-line driver.
pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Simfile { path: PathBuf, source: SimfileError },
    #[error("{path}: {source}")]
    Audio { path: PathBuf, source: AudioError },
    #[error("{simfile}: music file {audio} not found")]
    MissingAudio { simfile: PathBuf, audio: PathBuf },
    #[error("feature cache: {0}")]
    Cache(String),
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },
    #[error("no usable {0} in the dataset")]
    NoData(&'static str),
    #[error(transparent)]
    BeatGrid(#[from] BeatGridError),
    #[error(transparent)]
    Tempo(#[from] TempoError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl From<NeuralError> for PipelineError {
    fn from(e: NeuralError) -> Self {
        PipelineError::Model(ModelError::Neural(e))
    }
}

impl PipelineError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn audio(path: &Path, source: AudioError) -> Self {
        PipelineError::Audio {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => EXIT_USAGE,
            PipelineError::Model(ModelError::NonFiniteLoss { .. })
            | PipelineError::Model(ModelError::Neural(NeuralError::NonFinite { .. })) => {
                EXIT_NUMERIC
            }
            _ => EXIT_DATA,
        }
    }
}
