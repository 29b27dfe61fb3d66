//! Checkpoint container: one line of compact UTF-8 JSON manifest, a newline,
//! then every array as contiguous little-endian values. Offsets in the
//! manifest count from the first byte after the newline.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{HarnessError, Result, RunConfig};
use crate::autodiff::{AdamState, ParamStore, Precision, Real, Tensor};
use crate::tasks::VocabFile;

pub const FORMAT: &str = "dcmann-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub bytes: u64,
}

/// Where training stands. The shuffle order of an epoch is a pure function
/// of `(shuffle_seed, epoch)`, so this is the complete sampler state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    /// Training sequences consumed so far.
    pub step: usize,
    pub epoch: usize,
    /// Next index into the epoch's shuffled order.
    pub position: usize,
    pub shuffle_seed: u64,
    pub adam_t: u64,
    pub best_metric: Option<f64>,
    pub best_step: Option<usize>,
    pub evals_since_best: usize,
    /// Loss sum and count since the last evaluation.
    pub running_loss: f64,
    pub running_count: usize,
    /// Patience ran out; no further training steps are taken.
    pub stopped_early: bool,
    /// Training and the final test evaluation are complete.
    pub finished: bool,
    /// Accumulated training time, only tracked when the config asks for it.
    pub wallclock_s: f64,
}

impl Progress {
    pub fn new(shuffle_seed: u64) -> Self {
        Self {
            step: 0,
            epoch: 0,
            position: 0,
            shuffle_seed,
            adam_t: 0,
            best_metric: None,
            best_step: None,
            evals_since_best: 0,
            running_loss: 0.0,
            running_count: 0,
            stopped_early: false,
            finished: false,
            wallclock_s: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub dtype: Precision,
    pub run_config: RunConfig,
    pub vocab: Option<VocabFile>,
    pub progress: Progress,
    pub arrays: Vec<ArrayEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub run_config: RunConfig,
    pub vocab: Option<VocabFile>,
    pub progress: Progress,
    pub params: ParamStore<T>,
    pub adam: AdamState<T>,
}

/// A checkpoint of either precision.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyCheckpoint {
    F32(Checkpoint<f32>),
    F64(Checkpoint<f64>),
}

impl AnyCheckpoint {
    pub fn run_config(&self) -> &RunConfig {
        match self {
            AnyCheckpoint::F32(c) => &c.run_config,
            AnyCheckpoint::F64(c) => &c.run_config,
        }
    }

    pub fn vocab(&self) -> Option<&VocabFile> {
        match self {
            AnyCheckpoint::F32(c) => c.vocab.as_ref(),
            AnyCheckpoint::F64(c) => c.vocab.as_ref(),
        }
    }

    pub fn progress(&self) -> &Progress {
        match self {
            AnyCheckpoint::F32(c) => &c.progress,
            AnyCheckpoint::F64(c) => &c.progress,
        }
    }
}

const PARAM: &str = "param:";
const ADAM_M: &str = "adam_m:";
const ADAM_V: &str = "adam_v:";

pub fn encode_checkpoint<T: Real>(ckpt: &Checkpoint<T>) -> Vec<u8> {
    let width = T::PRECISION.byte_width() as u64;
    let mut arrays = Vec::new();
    let mut data = Vec::new();
    let mut push = |name: String, shape: &[usize], values: &[T]| {
        arrays.push(ArrayEntry {
            name,
            shape: shape.to_vec(),
            offset: data.len() as u64,
            bytes: values.len() as u64 * width,
        });
        for v in values {
            v.write_le(&mut data);
        }
    };
    for (_, name, t) in ckpt.params.iter() {
        push(format!("{PARAM}{name}"), t.shape(), t.values());
    }
    for (prefix, moments) in [(ADAM_M, &ckpt.adam.m), (ADAM_V, &ckpt.adam.v)] {
        for ((_, name, t), m) in ckpt.params.iter().zip(moments) {
            push(format!("{prefix}{name}"), t.shape(), m);
        }
    }
    let mut progress = ckpt.progress.clone();
    progress.adam_t = ckpt.adam.t;
    let manifest = Manifest {
        format: FORMAT.to_string(),
        version: FORMAT_VERSION,
        dtype: T::PRECISION,
        run_config: ckpt.run_config.clone(),
        vocab: ckpt.vocab.clone(),
        progress,
        arrays,
    };
    let mut out = serde_json::to_vec(&manifest).expect("manifest serializes");
    out.push(b'\n');
    out.extend_from_slice(&data);
    out
}

pub fn save_checkpoint<T: Real>(path: &Path, ckpt: &Checkpoint<T>) -> Result<()> {
    // Write-then-rename so an interrupted save never clobbers the previous
    // checkpoint.
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, encode_checkpoint(ckpt)).map_err(|e| HarnessError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| HarnessError::io(path, e))
}

fn corrupt(msg: impl Into<String>) -> HarnessError {
    HarnessError::Checkpoint(msg.into())
}

pub fn read_manifest(bytes: &[u8]) -> Result<(Manifest, &[u8])> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| corrupt("no manifest line"))?;
    let head: serde_json::Value =
        serde_json::from_slice(&bytes[..nl]).map_err(|e| corrupt(format!("corrupt manifest: {e}")))?;
    if head.get("format").and_then(|f| f.as_str()) != Some(FORMAT) {
        return Err(corrupt("not a checkpoint file (format tag missing)"));
    }
    let version = head.get("version").and_then(|v| v.as_u64());
    if version != Some(u64::from(FORMAT_VERSION)) {
        return Err(HarnessError::VersionMismatch {
            found: version.map_or_else(|| "none".to_string(), |v| v.to_string()),
            expected: FORMAT_VERSION,
        });
    }
    let manifest: Manifest =
        serde_json::from_slice(&bytes[..nl]).map_err(|e| corrupt(format!("corrupt manifest: {e}")))?;
    Ok((manifest, &bytes[nl + 1..]))
}

fn decode<T: Real>(manifest: Manifest, data: &[u8]) -> Result<Checkpoint<T>> {
    let width = T::PRECISION.byte_width();
    let mut params = ParamStore::new();
    let mut m = Vec::new();
    let mut v = Vec::new();
    for entry in &manifest.arrays {
        let numel: usize = entry.shape.iter().product();
        if entry.bytes != (numel * width) as u64 {
            return Err(corrupt(format!(
                "array `{}` declares {} bytes for shape {:?}",
                entry.name, entry.bytes, entry.shape
            )));
        }
        let start = entry.offset as usize;
        let end = start + entry.bytes as usize;
        if end > data.len() {
            return Err(HarnessError::Truncated {
                array: entry.name.clone(),
                needed: end as u64,
                available: data.len() as u64,
            });
        }
        let values: Vec<T> = data[start..end].chunks_exact(width).map(T::read_le).collect();
        if let Some(name) = entry.name.strip_prefix(PARAM) {
            let tensor = Tensor::new(entry.shape.clone(), values).map_err(|e| corrupt(e.to_string()))?;
            params.insert(name, tensor).map_err(|e| corrupt(e.to_string()))?;
        } else if entry.name.starts_with(ADAM_M) {
            m.push(values);
        } else if entry.name.starts_with(ADAM_V) {
            v.push(values);
        } else {
            return Err(corrupt(format!("unknown array `{}`", entry.name)));
        }
    }
    if m.len() != params.len() || v.len() != params.len() {
        return Err(corrupt("optimizer moments do not match the parameters"));
    }
    let adam = AdamState {
        config: manifest.run_config.optimizer,
        m,
        v,
        t: manifest.progress.adam_t,
    };
    Ok(Checkpoint {
        run_config: manifest.run_config,
        vocab: manifest.vocab,
        progress: manifest.progress,
        params,
        adam,
    })
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<AnyCheckpoint> {
    let (manifest, data) = read_manifest(bytes)?;
    match manifest.dtype {
        Precision::F32 => Ok(AnyCheckpoint::F32(decode(manifest, data)?)),
        Precision::F64 => Ok(AnyCheckpoint::F64(decode(manifest, data)?)),
    }
}

pub fn load_checkpoint(path: &Path) -> Result<AnyCheckpoint> {
    let bytes = std::fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    decode_checkpoint(&bytes)
}
