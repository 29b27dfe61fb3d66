use std::fs::File;
use std::io::{BufWriter, Cursor, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::checkpoint::{load_checkpoint, AnyCheckpoint, Checkpoint};
use super::train::{score, write_report};
use super::{HarnessError, Result};
use crate::autodiff::Real;
use crate::memory::{MemoryTraceRecord, Phase};
use crate::metrics::{aggregate_read_modes, EvalReport, ReadModeRecord, ReadModeSummary};
use crate::model::Model;
use crate::tasks::{read_jsonl, read_vocab, SequencePair, VocabFile};

/// The vocabulary to check a dataset against: `explicit`, else a
/// `vocab.json` beside the data file.
fn dataset_vocab(data: &Path, explicit: Option<&Path>) -> Result<Option<VocabFile>> {
    let path = match explicit {
        Some(p) => Some(p.to_path_buf()),
        None => data.parent().map(|d| d.join("vocab.json")).filter(|p| p.is_file()),
    };
    path.map(|p| read_vocab(&p).map_err(HarnessError::from)).transpose()
}

fn check_vocab<T>(ckpt: &Checkpoint<T>, vocab: Option<&VocabFile>, pairs: &[SequencePair]) -> Result<()> {
    if let (Some(theirs), Some(ours)) = (vocab, ckpt.vocab.as_ref()) {
        if theirs != ours {
            return Err(HarnessError::VocabMismatch(
                "the dataset's vocabulary differs from the one the checkpoint was trained with".into(),
            ));
        }
    }
    let m = &ckpt.run_config.model;
    for (i, p) in pairs.iter().enumerate() {
        let bad_in = p.input.iter().find(|&&t| t >= m.input_vocab);
        let bad_out = p.target.iter().find(|&&t| t >= m.output_vocab);
        if let Some(t) = bad_in.or(bad_out) {
            return Err(HarnessError::VocabMismatch(format!(
                "pair {} uses token id {t}, outside the model's vocabulary",
                i + 1
            )));
        }
    }
    Ok(())
}

fn model_of<T: Real>(ckpt: &Checkpoint<T>) -> Result<Model<T>> {
    Ok(Model::from_params(ckpt.run_config.model.clone(), ckpt.params.clone())?)
}

/// Greedy decoding of every pair in `data`; writes `eval_report.json` and
/// `eval_report.csv` into `out`.
pub fn evaluate_checkpoint(checkpoint: &Path, data: &Path, vocab: Option<&Path>, out: &Path) -> Result<EvalReport> {
    let ckpt = load_checkpoint(checkpoint)?;
    let pairs = read_jsonl(data)?;
    let vocab = dataset_vocab(data, vocab)?;
    let report = match &ckpt {
        AnyCheckpoint::F32(c) => eval_as(c, vocab.as_ref(), &pairs)?,
        AnyCheckpoint::F64(c) => eval_as(c, vocab.as_ref(), &pairs)?,
    };
    std::fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))?;
    write_report(out, "eval_report", &report)?;
    Ok(report)
}

fn eval_as<T: Real>(ckpt: &Checkpoint<T>, vocab: Option<&VocabFile>, pairs: &[SequencePair]) -> Result<EvalReport> {
    check_vocab(ckpt, vocab, pairs)?;
    let model = model_of(ckpt)?;
    Ok(score(&model, pairs)?.1)
}

/// One line of `trace.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InspectRecord {
    pub example: usize,
    #[serde(flatten)]
    pub record: MemoryTraceRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InspectSummary {
    pub examples: Vec<usize>,
    pub records: usize,
    pub read_modes: ReadModeSummary,
    /// Largest write weight seen in any decode-phase record.
    pub max_decode_write: f64,
    pub out_dir: PathBuf,
}

/// Runs greedy inference with tracing on the chosen examples (all of
/// `data` when `examples` is empty). Writes `trace.jsonl`,
/// `read_modes.jsonl` and `read_mode_summary.json` into `out`.
pub fn inspect_checkpoint(checkpoint: &Path, data: &Path, examples: &[usize], out: &Path) -> Result<InspectSummary> {
    let ckpt = load_checkpoint(checkpoint)?;
    let variant = ckpt.run_config().model.variant;
    if !variant.has_memory() {
        return Err(HarnessError::Unsupported(format!(
            "variant `{variant}` has no external memory, so there is nothing to inspect"
        )));
    }
    let pairs = read_jsonl(data)?;
    let chosen: Vec<usize> = if examples.is_empty() {
        (0..pairs.len()).collect()
    } else {
        examples.to_vec()
    };
    if let Some(&bad) = chosen.iter().find(|&&i| i >= pairs.len()) {
        return Err(HarnessError::Config(format!(
            "example {bad} out of range: {} has {} pairs",
            data.display(),
            pairs.len()
        )));
    }
    let vocab = dataset_vocab(data, None)?;
    let records = match &ckpt {
        AnyCheckpoint::F32(c) => trace_as(c, vocab.as_ref(), &pairs, &chosen)?,
        AnyCheckpoint::F64(c) => trace_as(c, vocab.as_ref(), &pairs, &chosen)?,
    };

    std::fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))?;
    let trace_path = out.join("trace.jsonl");
    let mut trace = BufWriter::new(File::create(&trace_path).map_err(|e| HarnessError::io(&trace_path, e))?);
    let mut modes = Vec::new();
    let mut max_decode_write = 0.0f64;
    for rec in &records {
        let line = serde_json::to_string(rec).map_err(|e| HarnessError::io(&trace_path, e.into()))?;
        writeln!(trace, "{line}").map_err(|e| HarnessError::io(&trace_path, e))?;
        let r = &rec.record;
        for (head, pi) in r.read_modes.iter().enumerate() {
            let line = ReadModeRecord {
                step: r.step,
                phase: r.phase,
                head,
                pi: *pi,
            };
            serde_json::to_writer(&mut modes, &line).expect("in-memory write");
            modes.push(b'\n');
        }
        if r.phase == Phase::Decode {
            max_decode_write = r.write_weights.iter().fold(max_decode_write, |m, w| m.max(w.abs()));
        }
    }
    trace.flush().map_err(|e| HarnessError::io(&trace_path, e))?;
    let modes_path = out.join("read_modes.jsonl");
    std::fs::write(&modes_path, &modes).map_err(|e| HarnessError::io(&modes_path, e))?;
    let summary = InspectSummary {
        examples: chosen,
        records: records.len(),
        read_modes: aggregate_read_modes(Cursor::new(modes))?,
        max_decode_write,
        out_dir: out.to_path_buf(),
    };
    let summary_path = out.join("read_mode_summary.json");
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
    std::fs::write(&summary_path, text).map_err(|e| HarnessError::io(&summary_path, e))?;
    Ok(summary)
}

fn trace_as<T: Real>(
    ckpt: &Checkpoint<T>,
    vocab: Option<&VocabFile>,
    pairs: &[SequencePair],
    chosen: &[usize],
) -> Result<Vec<InspectRecord>> {
    let selected: Vec<SequencePair> = chosen.iter().map(|&i| pairs[i].clone()).collect();
    check_vocab(ckpt, vocab, &selected)?;
    let model = model_of(ckpt)?;
    let mut out = Vec::new();
    for &i in chosen {
        let (_, trace) = model.predict_traced(&pairs[i].input, None, true)?;
        out.extend(trace.into_iter().map(|record| InspectRecord { example: i, record }));
    }
    Ok(out)
}
