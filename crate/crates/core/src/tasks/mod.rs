//! Datasets: the odd-even benchmark, admission-history encoding, a
//! synthetic EMR generator, CSV ingestion and deterministic splits.

mod admission;
mod dataset;
mod emr;
mod mimic;
mod odd_even;
mod split;
pub mod vocab;

use std::path::PathBuf;

use thiserror::Error;

pub use admission::{emr_pairs, emr_vocab, encode_admission_history, Patient, TokenPair, Visit};
pub use dataset::{read_jsonl, read_vocab, write_jsonl, write_vocab, SequencePair};
pub use emr::{fit_truncated_geometric, gen_synthetic_emr, EmrGenConfig, LengthDist, TruncatedGeometric};
pub use mimic::{ingest_mimic, ColumnMap, IngestReport, TreatmentKind};
pub use odd_even::{gen_odd_even, odd_even_target, odd_even_vocab, MAX_ODD};
pub use split::{split_dataset, Splits};
pub use vocab::{VocabFile, Vocabulary};

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("unknown token `{0}`")]
    UnknownToken(String),
    #[error("token id {id} outside vocabulary of size {size}")]
    UnknownId { id: usize, size: usize },
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{file}: missing required column `{column}`")]
    MissingColumn { file: String, column: String },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

pub type Result<T, E = TaskError> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> TaskError {
    TaskError::Invalid(msg.into())
}
