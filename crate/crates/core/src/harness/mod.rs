//! Configuration, training loop, checkpoints, evaluation and inspection:
//! everything the command-line tool drives.

mod checkpoint;
mod config;
mod eval;
mod gen;
mod train;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::metrics::MetricsError;
use crate::model::ModelError;
use crate::tasks::TaskError;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, read_manifest, save_checkpoint, AnyCheckpoint, ArrayEntry,
    Checkpoint, Manifest, Progress, FORMAT, FORMAT_VERSION,
};
pub use config::{DataPaths, GenConfig, OddEvenGen, ResolvedData, RunConfig, Seeds, Task};
pub use eval::{evaluate_checkpoint, inspect_checkpoint, InspectRecord, InspectSummary};
pub use gen::{gen_data, GenSummary};
pub use train::{epoch_order, train, TrainOptions, TrainSummary, METRICS_HEADER};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: String, expected: u32 },
    #[error("checkpoint truncated in array `{array}`: needs {needed} data bytes, file has {available}")]
    Truncated { array: String, needed: u64, available: u64 },
    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),
    #[error("non-finite loss or gradient at step {step}; last good checkpoint kept")]
    NonFinite { step: usize },
    #[error("{0}")]
    Unsupported(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

impl HarnessError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Whether the failure stems from what the user asked for rather than
    /// from the run itself.
    pub fn is_usage(&self) -> bool {
        matches!(self, HarnessError::Config(_))
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
