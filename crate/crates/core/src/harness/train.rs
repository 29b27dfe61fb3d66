use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::checkpoint::{load_checkpoint, save_checkpoint, AnyCheckpoint, Checkpoint, Progress};
use super::{HarnessError, Result, RunConfig, Task};
use crate::autodiff::{AdamState, ParamStore, Precision, Real};
use crate::metrics::{EvalReport, ReadModeRecord, ReportSummary};
use crate::model::{Model, ModelConfig};
use crate::tasks::{read_jsonl, read_vocab, SequencePair, VocabFile};

pub const METRICS_HEADER: &str = "step,split,loss,nld,precision,jaccard,wallclock_s";

const METRICS_FILE: &str = "metrics.csv";
const READ_MODES_FILE: &str = "read_modes.jsonl";
const LATEST: &str = "latest.ckpt";
const BEST: &str = "best.ckpt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TrainOptions {
    /// Continue from `latest.ckpt` in the output directory.
    pub resume: bool,
    /// Save `latest.ckpt` and return right after this step, as if the
    /// process had been stopped there.
    pub pause_at: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub steps: usize,
    pub epochs: usize,
    pub best_metric: Option<f64>,
    pub best_step: Option<usize>,
    pub stopped_early: bool,
    pub paused: bool,
    pub resumed_from: Option<usize>,
    pub test: Option<ReportSummary>,
    pub out_dir: PathBuf,
}

/// Visiting order of the training set in `epoch`. A pure function of its
/// arguments so a resumed run needs only the epoch and position.
pub fn epoch_order(n: usize, shuffle_seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

struct Data {
    vocab: VocabFile,
    train: Vec<SequencePair>,
    monitor: Vec<SequencePair>,
    test: Option<Vec<SequencePair>>,
}

fn load_pairs(path: &Path, vocab: &VocabFile) -> Result<Vec<SequencePair>> {
    let pairs = read_jsonl(path)?;
    for (i, p) in pairs.iter().enumerate() {
        p.validate(vocab)
            .map_err(|e| HarnessError::Config(format!("{} pair {}: {e}", path.display(), i + 1)))?;
    }
    Ok(pairs)
}

fn load_data(config: &RunConfig) -> Result<Data> {
    let paths = config.data.resolve()?;
    let vocab = read_vocab(&paths.vocab)?;
    let train = load_pairs(&paths.train, &vocab)?;
    if train.is_empty() {
        return Err(HarnessError::Config(format!("{} is empty", paths.train.display())));
    }
    let mut monitor = match &paths.valid {
        Some(p) => load_pairs(p, &vocab)?,
        None => train.iter().take(config.monitor_count).cloned().collect(),
    };
    if let Some(limit) = config.eval_limit {
        monitor.truncate(limit);
    }
    if monitor.is_empty() {
        return Err(HarnessError::Config(
            "no pairs to monitor: empty valid set or monitor_count 0".into(),
        ));
    }
    let test = paths.test.as_deref().map(|p| load_pairs(p, &vocab)).transpose()?;
    Ok(Data {
        vocab,
        train,
        monitor,
        test,
    })
}

/// Fills vocabulary sizes and the decode cap left at zero, and rejects sizes
/// that disagree with the vocabulary file.
fn resolve_model(model: &ModelConfig, vocab: &VocabFile, train: &[SequencePair]) -> Result<ModelConfig> {
    let mut m = model.clone();
    for (name, slot, actual) in [
        ("input_vocab", &mut m.input_vocab, vocab.input.len()),
        ("output_vocab", &mut m.output_vocab, vocab.output.len()),
    ] {
        if *slot == 0 {
            *slot = actual;
        } else if *slot != actual {
            return Err(HarnessError::VocabMismatch(format!(
                "model.{name} is {} but the vocabulary file has {actual} tokens",
                *slot
            )));
        }
    }
    if m.max_decode_len == 0 {
        m.max_decode_len = 2 * train.iter().map(|p| p.target.len()).max().unwrap_or(1);
    }
    m.validate()?;
    Ok(m)
}

/// Mean loss and greedy-decoding report over `pairs`.
pub(crate) fn score<T: Real>(model: &Model<T>, pairs: &[SequencePair]) -> Result<(f64, EvalReport)> {
    let mut loss = 0.0;
    let mut preds = Vec::with_capacity(pairs.len());
    for p in pairs {
        loss += model.loss(&p.input, &p.target)?;
        preds.push(model.predict(&p.input, None)?);
    }
    let report = EvalReport::from_pairs(
        preds
            .iter()
            .map(Vec::as_slice)
            .zip(pairs.iter().map(|p| p.target.as_slice())),
    );
    Ok((loss / pairs.len().max(1) as f64, report))
}

/// Validation Jaccard for treatment tasks (higher wins), NLD otherwise.
fn selection_metric(task: Task, s: &ReportSummary) -> f64 {
    if task.is_emr() {
        s.mean_jaccard
    } else {
        s.mean_nld
    }
}

fn improves(task: Task, new: f64, best: Option<f64>) -> bool {
    match best {
        None => true,
        Some(b) if task.is_emr() => new > b,
        Some(b) => new < b,
    }
}

struct Row<'a> {
    step: usize,
    split: &'a str,
    loss: f64,
    summary: Option<&'a ReportSummary>,
    wallclock: Option<f64>,
}

fn format_row(task: Task, row: &Row) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let (nld, precision, jaccard) = match row.summary {
        None => (None, None, None),
        Some(s) if task.is_emr() => (None, Some(s.mean_precision), Some(s.mean_jaccard)),
        Some(s) => (Some(s.mean_nld), None, None),
    };
    format!(
        "{},{},{},{},{},{},{}\n",
        row.step,
        row.split,
        row.loss,
        opt(nld),
        opt(precision),
        opt(jaccard),
        opt(row.wallclock)
    )
}

/// Rewrites a line-oriented log keeping only the lines `keep` accepts.
fn filter_lines(path: &Path, keep: impl Fn(&str) -> bool) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let file = File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let mut kept = String::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| HarnessError::io(path, e))?;
        if keep(&line) {
            kept.push_str(&line);
            kept.push('\n');
        }
    }
    std::fs::write(path, kept).map_err(|e| HarnessError::io(path, e))
}

fn open_append(path: &Path) -> Result<BufWriter<File>> {
    OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map(BufWriter::new)
        .map_err(|e| HarnessError::io(path, e))
}

struct Run<T> {
    config: RunConfig,
    data: Data,
    out: PathBuf,
    model: Model<T>,
    adam: AdamState<T>,
    progress: Progress,
    metrics: BufWriter<File>,
    read_modes: Option<BufWriter<File>>,
    started: Instant,
    wallclock_base: f64,
}

impl<T: Real> Run<T> {
    fn wallclock(&self) -> Option<f64> {
        self.config
            .record_wallclock
            .then(|| self.wallclock_base + self.started.elapsed().as_secs_f64())
    }

    fn write_row(&mut self, split: &str, loss: f64, summary: Option<&ReportSummary>) -> Result<()> {
        let row = Row {
            step: self.progress.step,
            split,
            loss,
            summary,
            wallclock: self.wallclock(),
        };
        let line = format_row(self.config.task, &row);
        self.metrics
            .write_all(line.as_bytes())
            .map_err(|e| HarnessError::io(&self.out.join(METRICS_FILE), e))
    }

    fn flush(&mut self) -> Result<()> {
        self.metrics
            .flush()
            .map_err(|e| HarnessError::io(&self.out.join(METRICS_FILE), e))?;
        if let Some(w) = self.read_modes.as_mut() {
            w.flush()
                .map_err(|e| HarnessError::io(&self.out.join(READ_MODES_FILE), e))?;
        }
        Ok(())
    }

    fn checkpoint(&mut self, params: ParamStore<T>) -> Checkpoint<T> {
        let mut progress = self.progress.clone();
        if let Some(w) = self.wallclock() {
            progress.wallclock_s = w;
        }
        Checkpoint {
            run_config: self.config.clone(),
            vocab: Some(self.data.vocab.clone()),
            progress,
            params,
            adam: self.adam.clone(),
        }
    }

    fn save(&mut self, name: &str) -> Result<()> {
        self.flush()?;
        let ckpt = self.checkpoint(self.model.params().clone());
        save_checkpoint(&self.out.join(name), &ckpt)
    }

    fn evaluate(&mut self) -> Result<()> {
        let p = &mut self.progress;
        let train_loss = if p.running_count > 0 {
            p.running_loss / p.running_count as f64
        } else {
            f64::NAN
        };
        p.running_loss = 0.0;
        p.running_count = 0;
        if train_loss.is_finite() {
            self.write_row("train", train_loss, None)?;
        }
        let (loss, report) = score(&self.model, &self.data.monitor)?;
        self.write_row("valid", loss, Some(&report.summary))?;
        let metric = selection_metric(self.config.task, &report.summary);
        log::info!(
            "step {} epoch {}: train loss {train_loss:.4}, valid loss {loss:.4}, metric {metric:.4}",
            self.progress.step,
            self.progress.epoch
        );
        let p = &mut self.progress;
        if improves(self.config.task, metric, p.best_metric) {
            p.best_metric = Some(metric);
            p.best_step = Some(p.step);
            p.evals_since_best = 0;
            self.save(BEST)?;
        } else {
            p.evals_since_best += 1;
            let patience = self.config.early_stop_patience;
            if patience > 0 && p.evals_since_best >= patience {
                log::info!("no improvement in {patience} evaluations, stopping");
                p.stopped_early = true;
            }
        }
        self.save(LATEST)
    }

    fn log_read_modes(&mut self, modes: &[(crate::memory::Phase, Vec<[f64; 3]>)]) -> Result<()> {
        let path = self.out.join(READ_MODES_FILE);
        let Some(w) = self.read_modes.as_mut() else {
            return Ok(());
        };
        for (phase, heads) in modes {
            for (head, pi) in heads.iter().enumerate() {
                let rec = ReadModeRecord {
                    step: self.progress.step,
                    phase: *phase,
                    head,
                    pi: *pi,
                };
                serde_json::to_writer(&mut *w, &rec).map_err(|e| HarnessError::io(&path, e.into()))?;
                w.write_all(b"\n").map_err(|e| HarnessError::io(&path, e))?;
            }
        }
        Ok(())
    }

    fn budget(&self) -> usize {
        let n = self.data.train.len();
        let by_epochs = if self.config.epochs > 0 {
            self.config.epochs.saturating_mul(n)
        } else {
            usize::MAX
        };
        by_epochs.min(self.config.max_steps.unwrap_or(usize::MAX))
    }

    /// Returns `true` when stopped by `pause_at`.
    fn train_loop(&mut self, pause_at: Option<usize>) -> Result<bool> {
        let n = self.data.train.len();
        let budget = self.budget();
        let mut order: Option<(usize, Vec<usize>)> = None;
        while self.progress.step < budget && !self.progress.stopped_early {
            if self.progress.position >= n {
                self.progress.epoch += 1;
                self.progress.position = 0;
            }
            let epoch = self.progress.epoch;
            if order.as_ref().map(|o| o.0) != Some(epoch) {
                order = Some((epoch, epoch_order(n, self.progress.shuffle_seed, epoch)));
            }
            let idx = order.as_ref().expect("order set above").1[self.progress.position];
            let pair = &self.data.train[idx];
            let step = self.progress.step + 1;

            self.model.params_mut().zero_grads();
            let outcome = self.model.accumulate_gradients(&pair.input, &pair.target)?;
            let norm = self.model.params_mut().clip_grad_norm(self.config.grad_clip);
            if !outcome.loss.is_finite() || !norm.is_finite() {
                self.flush()?;
                return Err(HarnessError::NonFinite { step });
            }
            self.adam.step(self.model.params_mut())?;

            let p = &mut self.progress;
            p.step = step;
            p.position += 1;
            p.running_loss += outcome.loss;
            p.running_count += 1;
            let every = self.config.read_mode_every;
            if every > 0 && step % every == 0 {
                self.log_read_modes(&outcome.read_modes)?;
            }
            if step % self.config.eval_every == 0 {
                self.evaluate()?;
            }
            if pause_at == Some(step) {
                if step % self.config.eval_every != 0 {
                    self.save(LATEST)?;
                }
                return Ok(true);
            }
        }
        if self.progress.running_count > 0 || self.progress.best_metric.is_none() {
            self.evaluate()?;
        }
        Ok(false)
    }

    fn test(&mut self) -> Result<Option<ReportSummary>> {
        let Some(test) = self.data.test.clone() else {
            return Ok(None);
        };
        let best = match load_checkpoint(&self.out.join(BEST))? {
            AnyCheckpoint::F32(c) => cast_params::<f32, T>(c.params),
            AnyCheckpoint::F64(c) => cast_params::<f64, T>(c.params),
        };
        let model = Model::from_params(self.model.config().clone(), best)?;
        let (loss, report) = score(&model, &test)?;
        write_report(&self.out, "test_report", &report)?;
        self.write_row("test", loss, Some(&report.summary))?;
        Ok(Some(report.summary))
    }
}

fn cast_params<S: Real, T: Real>(params: ParamStore<S>) -> ParamStore<T> {
    let mut out = ParamStore::new();
    for (_, name, t) in params.iter() {
        let values = t.values().iter().map(|v| T::lit(v.as_f64())).collect();
        let tensor = crate::autodiff::Tensor::new(t.shape().to_vec(), values).expect("shape already valid");
        out.insert(name, tensor).expect("names already unique");
    }
    out
}

pub(crate) fn write_report(dir: &Path, stem: &str, report: &EvalReport) -> Result<()> {
    let json = dir.join(format!("{stem}.json"));
    let file = File::create(&json).map_err(|e| HarnessError::io(&json, e))?;
    report.write_json(BufWriter::new(file))?;
    let csv = dir.join(format!("{stem}.csv"));
    let file = File::create(&csv).map_err(|e| HarnessError::io(&csv, e))?;
    report.write_csv(BufWriter::new(file))?;
    Ok(())
}

/// Runs (or with `resume`, continues) the training described by `config`.
///
/// Writes into `config.out_dir`: `run_config.json`, `metrics.csv`,
/// `read_modes.jsonl` for memory variants, `latest.ckpt`, `best.ckpt`, and
/// `test_report.{json,csv}` when a test split is configured.
///
/// Resuming a finished run with a larger step or epoch budget continues it.
pub fn train(config: &RunConfig, options: TrainOptions) -> Result<TrainSummary> {
    config.validate()?;
    match config.model.precision {
        Precision::F32 => train_as::<f32>(config, options),
        Precision::F64 => train_as::<f64>(config, options),
    }
}

/// Fields that may change between an interrupted run and its resumption.
fn comparable(config: &RunConfig) -> RunConfig {
    RunConfig {
        epochs: 0,
        max_steps: None,
        ..config.clone()
    }
}

fn train_as<T: Real>(config: &RunConfig, options: TrainOptions) -> Result<TrainSummary> {
    let data = load_data(config)?;
    let mut config = config.clone();
    config.model = resolve_model(&config.model, &data.vocab, &data.train)?;
    let out = config.out_dir.clone();
    std::fs::create_dir_all(&out).map_err(|e| HarnessError::io(&out, e))?;
    let metrics_path = out.join(METRICS_FILE);
    let modes_path = out.join(READ_MODES_FILE);
    let has_memory = config.model.variant.has_memory();

    let (model, adam, progress, resumed_from) = if options.resume {
        let path = out.join(LATEST);
        if !path.exists() {
            return Err(HarnessError::Config(format!(
                "cannot resume: {} does not exist",
                path.display()
            )));
        }
        let ckpt = match load_checkpoint(&path)? {
            AnyCheckpoint::F32(c) if T::PRECISION == Precision::F32 => cast_checkpoint::<f32, T>(c),
            AnyCheckpoint::F64(c) if T::PRECISION == Precision::F64 => cast_checkpoint::<f64, T>(c),
            _ => {
                return Err(HarnessError::Config(
                    "checkpoint precision differs from the config".into(),
                ))
            }
        };
        if comparable(&ckpt.run_config) != comparable(&config) {
            return Err(HarnessError::Config(
                "config differs from the checkpoint's beyond epochs/max_steps; refusing to resume".into(),
            ));
        }
        if ckpt.vocab.as_ref() != Some(&data.vocab) {
            return Err(HarnessError::VocabMismatch(
                "dataset vocabulary differs from the checkpoint's".into(),
            ));
        }
        let mut progress = ckpt.progress;
        let step = progress.step;
        let n = data.train.len();
        let budget = if config.epochs > 0 {
            config.epochs.saturating_mul(n)
        } else {
            usize::MAX
        }
        .min(config.max_steps.unwrap_or(usize::MAX));
        if progress.finished && !progress.stopped_early && step < budget {
            log::info!("extending finished run from step {step}");
            progress.finished = false;
        }
        let finished = progress.finished;
        filter_lines(&metrics_path, |line| {
            if line == METRICS_HEADER {
                return true;
            }
            let mut cols = line.split(',');
            let s = cols.next().and_then(|s| s.parse::<usize>().ok());
            let split = cols.next();
            s.is_some_and(|s| s <= step) && (finished || split != Some("test"))
        })?;
        filter_lines(&modes_path, |line| {
            serde_json::from_str::<serde_json::Value>(line)
                .ok()
                .and_then(|v| v.get("step").and_then(|s| s.as_u64()))
                .is_some_and(|s| s as usize <= step)
        })?;
        let model = Model::from_params(config.model.clone(), ckpt.params)?;
        let mut adam = ckpt.adam;
        adam.config = config.optimizer;
        (model, adam, progress, Some(step))
    } else {
        let model = Model::<T>::new(config.model.clone(), config.seeds.init)?;
        let adam = AdamState::new(config.optimizer, model.params());
        std::fs::write(&metrics_path, format!("{METRICS_HEADER}\n")).map_err(|e| HarnessError::io(&metrics_path, e))?;
        if has_memory {
            std::fs::write(&modes_path, "").map_err(|e| HarnessError::io(&modes_path, e))?;
        } else if modes_path.exists() {
            std::fs::remove_file(&modes_path).map_err(|e| HarnessError::io(&modes_path, e))?;
        }
        for stale in [LATEST, BEST, "test_report.json", "test_report.csv"] {
            let p = out.join(stale);
            if p.exists() {
                std::fs::remove_file(&p).map_err(|e| HarnessError::io(&p, e))?;
            }
        }
        (model, adam, Progress::new(config.seeds.shuffle), None)
    };
    let run_config_path = out.join("run_config.json");
    std::fs::write(&run_config_path, config.to_json() + "\n").map_err(|e| HarnessError::io(&run_config_path, e))?;

    let metrics = open_append(&metrics_path)?;
    let read_modes = if has_memory {
        Some(open_append(&modes_path)?)
    } else {
        None
    };
    let wallclock_base = progress.wallclock_s;
    let mut run = Run {
        config,
        data,
        out: out.clone(),
        model,
        adam,
        progress,
        metrics,
        read_modes,
        started: Instant::now(),
        wallclock_base,
    };

    let mut paused = false;
    let test = if run.progress.finished {
        log::info!("run already finished at step {}", run.progress.step);
        None
    } else if run.train_loop(options.pause_at)? {
        paused = true;
        None
    } else {
        let test = run.test()?;
        run.progress.finished = true;
        run.save(LATEST)?;
        test
    };
    let test = match test {
        Some(t) => Some(t),
        None if !paused => read_test_summary(&out)?,
        None => None,
    };
    Ok(TrainSummary {
        steps: run.progress.step,
        epochs: run.progress.epoch + usize::from(run.progress.position > 0),
        best_metric: run.progress.best_metric,
        best_step: run.progress.best_step,
        stopped_early: run.progress.stopped_early,
        paused,
        resumed_from,
        test,
        out_dir: out,
    })
}

fn read_test_summary(out: &Path) -> Result<Option<ReportSummary>> {
    let path = out.join("test_report.json");
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
    let report: EvalReport =
        serde_json::from_str(&text).map_err(|e| HarnessError::Checkpoint(format!("{}: {e}", path.display())))?;
    Ok(Some(report.summary))
}

fn cast_checkpoint<S: Real, T: Real>(c: Checkpoint<S>) -> Checkpoint<T> {
    // Only called with S == T; the round trip through f64 is then exact.
    let cast = |v: Vec<Vec<S>>| -> Vec<Vec<T>> {
        v.into_iter()
            .map(|row| row.into_iter().map(|x| T::lit(x.as_f64())).collect())
            .collect()
    };
    Checkpoint {
        run_config: c.run_config,
        vocab: c.vocab,
        progress: c.progress,
        params: cast_params(c.params),
        adam: AdamState {
            config: c.adam.config,
            m: cast(c.adam.m),
            v: cast(c.adam.v),
            t: c.adam.t,
        },
    }
}
