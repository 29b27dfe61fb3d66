//! Controllers and complete encoder-decoder architectures.
//!
//! Five variants share one code path and differ only in which parts exist:
//!
//! | variant    | controllers | memory | decode writes |
//! |------------|-------------|--------|---------------|
//! | `seq2seq`  | 2           | no     | -             |
//! | `dnc`      | 1           | yes    | allowed       |
//! | `dnc_wp`   | 1           | yes    | blocked       |
//! | `dc_mann`  | 2           | yes    | allowed       |
//! | `dcw_mann` | 2           | yes    | blocked       |

mod config;
mod lstm;
mod network;

use thiserror::Error;

use crate::autodiff::AutodiffError;

pub use config::{ModelConfig, Variant};
pub use lstm::{lstm_cell, ControllerState, LstmWeights};
pub use network::{
    argmax, onehot_argmax, sequence_loss, DecodeMode, ForwardOutput, Model, StepOutput, StepState, TrainOutcome,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("unknown model variant `{0}`")]
    UnknownVariant(String),
    #[error("token id {id} is outside the vocabulary of size {size}")]
    UnknownToken { id: usize, size: usize },
    #[error("input sequence is empty")]
    EmptyInput,
    #[error("{what}: expected length {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("missing or malformed parameter `{0}`")]
    Parameter(String),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;
