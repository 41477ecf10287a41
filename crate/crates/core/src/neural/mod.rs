//! Small reverse-mode autodiff stack for the two networks: tensors, a tape,
//! recurrent layers, Adam, schedules, finite-difference checking and the
//! weights file format.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod optim;
pub mod tensor;

use thiserror::Error;

pub use checkpoint::{decode_weights, encode_weights, load_weights, save_weights};
pub use gradcheck::{grad_check, GradCheck};
pub use graph::{Gradients, Graph, Var};
pub use layers::{ConvLstmCell, Dense, LstmCell};
pub use optim::{
    adam_step, early_stop, reduce_on_plateau, AdamState, EarlyStopper, Mode, PlateauScheduler,
    StopDecision,
};
pub use tensor::{ParamId, ParamSet, Scalar, Tensor};

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("duplicate tensor name {0:?}")]
    NameCollision(String),
    #[error("tensor {0:?} missing from weights")]
    MissingTensor(String),
    #[error("non-finite gradient in parameter {name:?}")]
    NonFinite { name: String },
    #[error("invalid target: {0}")]
    InvalidTarget(String),
    #[error("not a weights file (bad magic)")]
    BadMagic,
    #[error("unsupported weights format version {0}")]
    Version(u32),
    #[error("weights file truncated")]
    Truncated,
    #[error("weights checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Crc { stored: u32, computed: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
