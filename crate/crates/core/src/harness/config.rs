use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{HarnessError, Result};
use crate::autodiff::AdamConfig;
use crate::model::ModelConfig;
use crate::tasks::{ColumnMap, EmrGenConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    OddEven,
    EmrProcedure,
    EmrDrug,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::OddEven => "odd-even",
            Task::EmrProcedure => "emr-procedure",
            Task::EmrDrug => "emr-drug",
        }
    }

    /// Sequence tasks are scored by NLD, treatment tasks by set overlap.
    pub fn is_emr(self) -> bool {
        self != Task::OddEven
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        [Task::OddEven, Task::EmrProcedure, Task::EmrDrug]
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| HarnessError::Config(format!("unknown task `{s}` (odd-even, emr-procedure, emr-drug)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub data: u64,
    pub init: u64,
    pub shuffle: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            data: 1,
            init: 1,
            shuffle: 1,
        }
    }
}

impl Seeds {
    pub fn all(seed: u64) -> Self {
        Self {
            data: seed,
            init: seed,
            shuffle: seed,
        }
    }
}

/// Dataset locations. `dir` supplies `train.jsonl`, `valid.jsonl`,
/// `test.jsonl` and `vocab.json` for any path left unset; a missing
/// `valid.jsonl` or `test.jsonl` in `dir` is simply absent.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    pub dir: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedData {
    pub train: PathBuf,
    pub valid: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub vocab: PathBuf,
}

impl DataPaths {
    pub fn in_dir(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: Some(dir.into()),
            ..Self::default()
        }
    }

    pub fn resolve(&self) -> Result<ResolvedData> {
        let from_dir = |name: &str| self.dir.as_ref().map(|d| d.join(name));
        let required = |explicit: &Option<PathBuf>, name: &str| -> Result<PathBuf> {
            let p = explicit
                .clone()
                .or_else(|| from_dir(name))
                .ok_or_else(|| HarnessError::Config(format!("data: no `{name}` path and no `dir`")))?;
            if !p.is_file() {
                return Err(HarnessError::Config(format!(
                    "data file {} does not exist",
                    p.display()
                )));
            }
            Ok(p)
        };
        let optional = |explicit: &Option<PathBuf>, name: &str| -> Result<Option<PathBuf>> {
            match explicit {
                Some(p) if !p.is_file() => Err(HarnessError::Config(format!(
                    "data file {} does not exist",
                    p.display()
                ))),
                Some(p) => Ok(Some(p.clone())),
                None => Ok(from_dir(name).filter(|p| p.is_file())),
            }
        };
        Ok(ResolvedData {
            train: required(&self.train, "train.jsonl")?,
            valid: optional(&self.valid, "valid.jsonl")?,
            test: optional(&self.test, "test.jsonl")?,
            vocab: required(&self.vocab, "vocab.json")?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OddEvenGen {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for OddEvenGen {
    fn default() -> Self {
        Self {
            train: 4000,
            valid: 0,
            test: 1000,
            min_len: 1,
            max_len: 20,
        }
    }
}

/// Dataset generation settings used by `gen-data`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub odd_even: OddEvenGen,
    /// Overrides the task preset for EMR tasks.
    pub emr: Option<EmrGenConfig>,
    pub split: Option<(f64, f64, f64)>,
    /// Build EMR datasets from CSV tables in this directory instead of
    /// the synthetic generator.
    pub source_dir: Option<PathBuf>,
    pub columns: ColumnMap,
}

impl GenConfig {
    pub fn emr_config(&self, task: Task) -> EmrGenConfig {
        self.emr.clone().unwrap_or_else(|| match task {
            Task::EmrDrug => EmrGenConfig::drug(),
            _ => EmrGenConfig::procedure(),
        })
    }

    pub fn split_ratios(&self) -> (f64, f64, f64) {
        self.split.unwrap_or((0.7, 0.1, 0.2))
    }
}

/// One complete experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    pub model: ModelConfig,
    pub optimizer: AdamConfig,
    /// Passes over the training set.
    pub epochs: usize,
    /// Optional cap on training sequences, counted across epochs.
    pub max_steps: Option<usize>,
    /// Training sequences between evaluations.
    pub eval_every: usize,
    /// Evaluations without improvement before stopping; 0 disables.
    pub early_stop_patience: usize,
    pub grad_clip: f64,
    pub seeds: Seeds,
    pub data: DataPaths,
    pub out_dir: PathBuf,
    /// Without a validation file, the first this-many training pairs are
    /// used to pick the best checkpoint.
    pub monitor_count: usize,
    /// Evaluate at most this many validation pairs per evaluation.
    pub eval_limit: Option<usize>,
    /// Log read modes of every this-many-th training sequence; 0 disables.
    pub read_mode_every: usize,
    /// Fill the `wallclock_s` column. Off by default so metrics files are
    /// byte-reproducible.
    pub record_wallclock: bool,
    pub gen: GenConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: Task::OddEven,
            model: ModelConfig::default(),
            optimizer: AdamConfig::default(),
            epochs: 20,
            max_steps: None,
            eval_every: 1000,
            early_stop_patience: 5,
            grad_clip: 10.0,
            seeds: Seeds::default(),
            data: DataPaths::default(),
            out_dir: PathBuf::from("runs/latest"),
            monitor_count: 200,
            eval_limit: None,
            read_mode_every: 100,
            record_wallclock: false,
            gen: GenConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks that do not need the dataset.
    pub fn validate(&self) -> Result<()> {
        if self.eval_every == 0 {
            return Err(HarnessError::Config("eval_every must be positive".into()));
        }
        if self.epochs == 0 && self.max_steps.is_none() {
            return Err(HarnessError::Config("epochs must be positive".into()));
        }
        if !(self.grad_clip > 0.0) {
            return Err(HarnessError::Config("grad_clip must be positive".into()));
        }
        if !(self.optimizer.lr > 0.0) {
            return Err(HarnessError::Config("optimizer.lr must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        let back: RunConfig = serde_json::from_str(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        let partial: RunConfig = serde_json::from_str(r#"{"task":"emr-drug","epochs":3}"#).unwrap();
        assert_eq!(partial.task, Task::EmrDrug);
        assert_eq!(partial.grad_clip, 10.0);
        assert!(serde_json::from_str::<RunConfig>(r#"{"epochz":3}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"model":{"variant":"ntm"}}"#).is_err());
    }

    #[test]
    fn data_resolution() {
        let dir = tempfile::tempdir().unwrap();
        let paths = DataPaths::in_dir(dir.path());
        assert!(paths.resolve().is_err());
        std::fs::write(dir.path().join("train.jsonl"), "").unwrap();
        std::fs::write(dir.path().join("vocab.json"), "").unwrap();
        let r = paths.resolve().unwrap();
        assert_eq!(r.valid, None);
        std::fs::write(dir.path().join("test.jsonl"), "").unwrap();
        assert!(paths.resolve().unwrap().test.is_some());
        let explicit = DataPaths {
            valid: Some(dir.path().join("nope.jsonl")),
            ..paths
        };
        assert!(explicit.resolve().is_err());
    }

    #[test]
    fn task_names() {
        assert_eq!("emr-procedure".parse::<Task>().unwrap(), Task::EmrProcedure);
        assert!("mimic".parse::<Task>().is_err());
        assert_eq!(serde_json::to_string(&Task::OddEven).unwrap(), "\"odd-even\"");
    }
}
