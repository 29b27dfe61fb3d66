//! The memory-free encoder-decoder used as the comparison baseline. It is
//! the `seq2seq` variant of [`Model`]: two LSTMs, no reads, output head on
//! the decoder state alone.

use crate::autodiff::{Bound, Real, Tape};
use crate::model::{DecodeMode, ForwardOutput, Model, ModelConfig, ModelError, Result, Variant};

/// Baseline config with the same extents as `config` and memory removed.
pub fn seq2seq_config(config: &ModelConfig) -> ModelConfig {
    ModelConfig {
        variant: Variant::Seq2seq,
        ..config.clone()
    }
}

/// Forward pass of a baseline model; rejects models of any other variant.
pub fn seq2seq_forward<T: Real>(
    model: &Model<T>,
    tape: &mut Tape<T>,
    bound: &Bound,
    input: &[usize],
    mode: DecodeMode<'_>,
) -> Result<ForwardOutput> {
    if model.config().variant != Variant::Seq2seq {
        return Err(ModelError::InvalidConfig(format!(
            "baseline forward called on a {} model",
            model.config().variant
        )));
    }
    model.forward_sequence(tape, bound, input, mode, false)
}
