use std::path::Path;

use serde::Serialize;

use super::{HarnessError, Result, RunConfig, Task};
use crate::tasks::{
    emr_pairs, emr_vocab, gen_odd_even, gen_synthetic_emr, ingest_mimic, odd_even_vocab, split_dataset, write_jsonl,
    write_vocab, TreatmentKind,
};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenSummary {
    pub task: Task,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    pub input_vocab: usize,
    pub output_vocab: usize,
    pub warnings: Vec<String>,
}

/// Writes `train.jsonl`, `valid.jsonl` (when non-empty), `test.jsonl` and
/// `vocab.json` into `out`. Everything is a function of the config and
/// `seeds.data`.
pub fn gen_data(config: &RunConfig, out: &Path) -> Result<GenSummary> {
    std::fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))?;
    let seed = config.seeds.data;
    let mut warnings = Vec::new();
    let (vocab, train, valid, test) = match config.task {
        Task::OddEven => {
            let g = &config.gen.odd_even;
            if g.min_len == 0 || g.min_len > g.max_len {
                return Err(HarnessError::Config(format!(
                    "gen.odd_even: need 1 <= min_len <= max_len, got {}..{}",
                    g.min_len, g.max_len
                )));
            }
            if g.train == 0 {
                return Err(HarnessError::Config("gen.odd_even.train must be positive".into()));
            }
            let all = gen_odd_even(g.train + g.valid + g.test, seed, g.min_len..=g.max_len)?;
            let valid_end = g.train + g.valid;
            (
                odd_even_vocab(),
                all[..g.train].to_vec(),
                all[g.train..valid_end].to_vec(),
                all[valid_end..].to_vec(),
            )
        }
        task => {
            let patients = match &config.gen.source_dir {
                Some(dir) => {
                    let kind = if task == Task::EmrDrug {
                        TreatmentKind::Drugs
                    } else {
                        TreatmentKind::Procedures
                    };
                    let report = ingest_mimic(dir, &config.gen.columns, kind)?;
                    warnings.extend(report.warnings);
                    if report.skipped_rows > 0 || report.orphan_rows > 0 {
                        warnings.push(format!(
                            "{} unparseable and {} orphan rows skipped",
                            report.skipped_rows, report.orphan_rows
                        ));
                    }
                    report.patients
                }
                None => gen_synthetic_emr(&config.gen.emr_config(task), seed)?,
            };
            let splits = split_dataset(&patients, config.gen.split_ratios(), seed)?;
            let vocab = emr_vocab(&patients);
            let train = emr_pairs(&splits.train, &vocab)?;
            let valid = emr_pairs(&splits.valid, &vocab)?;
            let test = emr_pairs(&splits.test, &vocab)?;
            (vocab, train, valid, test)
        }
    };
    write_vocab(&out.join("vocab.json"), &vocab)?;
    write_jsonl(&out.join("train.jsonl"), &train)?;
    if !valid.is_empty() {
        write_jsonl(&out.join("valid.jsonl"), &valid)?;
    }
    write_jsonl(&out.join("test.jsonl"), &test)?;
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(GenSummary {
        task: config.task,
        train: train.len(),
        valid: valid.len(),
        test: test.len(),
        input_vocab: vocab.input.len(),
        output_vocab: vocab.output.len(),
        warnings,
    })
}
