//! Stepchart generation toolkit.
//!
//! The pipeline runs in two stages. A branched ConvLSTM placement model reads
//! beat-aligned log-mel frames and predicts which of 48 slots per beat carry a
//! step; an autoregressive selection model then picks one of 256 arrow
//! symbols for every placed step. Around the models sit `.sm` file I/O, audio
//! featurization, tempo detection, dataset construction, evaluation metrics
//! and the `stepsmith` command-line driver.

pub mod audiofeat;
pub mod beatgrid;
pub mod evalmetrics;
pub mod models;
pub mod neural;
pub mod pipeline;
pub mod simfile;
pub mod tempo;
