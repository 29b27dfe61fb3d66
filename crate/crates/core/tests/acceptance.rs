//! End-to-end acceptance suite. Runs every criterion in order, prints one
//! PASS/FAIL line per criterion and exits non-zero if any failed.
//!
//! Pass criterion numbers to run a subset: `cargo test --test acceptance -- 4 7`.
//! The full-scale odd-even comparison takes hours and only runs with
//! `DCMANN_FULL_REPRO=1`. Run artifacts (metrics CSVs, checkpoints, inspect
//! output) are kept under `target/tmp/acceptance`.

mod support;

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use dcmann::autodiff::{gradient_check, AutodiffError, Precision, Tape};
use dcmann::harness::{
    decode_checkpoint, encode_checkpoint, gen_data, inspect_checkpoint, load_checkpoint, train, AnyCheckpoint,
    DataPaths, OddEvenGen, RunConfig, Seeds, Task, TrainOptions, TrainSummary,
};
use dcmann::memory::{
    allocation_weighting, memory_step, parse_interface_values, DecodeFreeze, MemoryShape, MemoryState, Phase,
};
use dcmann::metrics::{jaccard, levenshtein, nld, set_precision, strip_control, FrequencyPrior};
use dcmann::model::{sequence_loss, DecodeMode, Model, ModelConfig, Variant};
use dcmann::tasks::{read_jsonl, EmrGenConfig, LengthDist};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn artifacts() -> PathBuf {
    Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance")
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// 1 -----------------------------------------------------------------------

fn tiny_dcw() -> ModelConfig {
    ModelConfig {
        variant: Variant::DcwMann,
        hidden: 8,
        embed: 3,
        mem_slots: 4,
        word_size: 5,
        read_heads: 1,
        input_vocab: 6,
        output_vocab: 6,
        max_decode_len: 8,
        precision: Precision::F64,
        ..ModelConfig::default()
    }
}

fn model_gradient_error(cfg: ModelConfig, seed: u64) -> f64 {
    let model = Model::<f64>::new(cfg, seed).unwrap();
    let mut params = model.params().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    for (_, t) in params.iter_mut() {
        for v in t.values_mut() {
            *v = rng.gen_range(-0.6..0.6);
        }
    }
    let input = [4, 5, 4, 2];
    let targets = [5, 4, 0, 3];
    let to_ad = |e: dcmann::model::ModelError| AutodiffError::Invalid {
        op: "model",
        msg: e.to_string(),
    };
    // h = 1e-3: the loss is O(1) and some write-key gradients are ~1e-8,
    // so a smaller step drowns them in rounding.
    gradient_check(&mut params, 1e-3, |tape, bound| {
        let out = model
            .forward_sequence(tape, bound, &input, DecodeMode::Train(&targets), false)
            .map_err(to_ad)?;
        sequence_loss(tape, &out.logits, &targets).map_err(to_ad)
    })
    .unwrap()
    .max_rel_error
}

fn gradients() -> Outcome {
    let mut worst = ("", 0.0f64);
    for seed in 0..100 {
        for (name, err) in support::primitives::check_all(seed) {
            if err > worst.1 {
                worst = (name, err);
            }
        }
    }
    let primitives = support::primitives::cases().len();
    let mut model_worst = 0.0f64;
    for tf in [false, true] {
        for seed in [11, 12, 13] {
            let cfg = ModelConfig {
                teacher_forcing: tf,
                ..tiny_dcw()
            };
            model_worst = model_worst.max(model_gradient_error(cfg, seed));
        }
    }
    check(
        worst.1 < 1e-4 && model_worst < 1e-4,
        format!(
            "{primitives} primitives x 100 draws, worst rel err {:.2e} ({}); dcw_mann step worst {:.2e} (< 1e-4)",
            worst.1, worst.0, model_worst
        ),
    )
}

// 2 -----------------------------------------------------------------------

fn memory_oracle() -> Outcome {
    let shape = MemoryShape::new(4, 3, 1);
    let mut step_gap = 0.0f64;
    for seed in 0..100 {
        let phase = if seed % 2 == 0 { Phase::Encode } else { Phase::Decode };
        step_gap = step_gap.max(support::compare::oracle_gap(1000 + seed, shape, phase));
    }
    let mut rng = support::rng(2);
    let mut alloc_gap = 0.0f64;
    for _ in 0..100 {
        let n = rng.gen_range(1..10);
        // Quantized draws so ties occur.
        let usage: Vec<f64> = (0..n)
            .map(|_| {
                if rng.gen_bool(0.3) {
                    rng.gen_range(0..4) as f64 / 4.0
                } else {
                    rng.gen()
                }
            })
            .collect();
        let mut t = Tape::<f64>::new();
        let u = t.vector(usage.clone());
        let a = allocation_weighting(&mut t, u).unwrap();
        alloc_gap = alloc_gap.max(support::max_abs_diff(t.value(a), &support::allocation(&usage)));
    }
    check(
        step_gap < 1e-10 && alloc_gap <= 1e-12,
        format!("memory_step gap {step_gap:.2e} (< 1e-10), allocation gap {alloc_gap:.2e} (<= 1e-12)"),
    )
}

// 3 -----------------------------------------------------------------------

fn bits(xs: &[f64]) -> Vec<u64> {
    xs.iter().map(|x| x.to_bits()).collect()
}

fn invariant_fuzz() -> Outcome {
    let shape = MemoryShape::new(6, 4, 2);
    let mut rng = support::rng(3);
    let mut prev = MemoryState::<f64>::fresh(shape);
    let (mut decode_steps, mut walks) = (0, 1);
    for i in 0..1000 {
        // Restart from a fresh state now and then, like a new sequence.
        if i > 0 && rng.gen_bool(0.05) {
            prev = MemoryState::fresh(shape);
            walks += 1;
        }
        let phase = if rng.gen_bool(0.3) {
            Phase::Decode
        } else {
            Phase::Encode
        };
        let scale = rng.gen_range(0.5..8.0);
        let raw = support::raw_interface(&mut rng, shape, scale);
        let mut tape = Tape::<f64>::new();
        let vars = prev.to_tape(&mut tape).unwrap();
        let iface = parse_interface_values(&raw, shape).unwrap().to_tape(&mut tape);
        let out = memory_step(&mut tape, &vars, &iface, phase, DecodeFreeze::All).unwrap();
        let next = out.state.snapshot(&tape, shape);
        if let Err(e) = next.check_invariants() {
            return Err(format!("step {i}: {}", e.0));
        }
        if phase == Phase::Decode {
            decode_steps += 1;
            let same = bits(&next.mem) == bits(&prev.mem)
                && bits(&next.usage) == bits(&prev.usage)
                && bits(&next.precedence) == bits(&prev.precedence)
                && bits(&next.link) == bits(&prev.link)
                && next.write_weights.iter().all(|&w| w == 0.0);
            if !same {
                return Err(format!("decode step {i} changed the memory state"));
            }
        }
        prev = next;
    }

    // The same through whole networks of both write-protected variants.
    for variant in [Variant::DcwMann, Variant::DncWp] {
        let model = Model::<f64>::new(ModelConfig { variant, ..tiny_dcw() }, 3).unwrap();
        let (_, trace) = model.predict_traced(&[4, 5, 4, 2, 5], Some(6), true).unwrap();
        let decode: Vec<_> = trace.iter().filter(|r| r.phase == Phase::Decode).collect();
        let frozen = decode.windows(2).all(|w| bits(&w[0].usage) == bits(&w[1].usage))
            && decode.iter().all(|r| r.write_weights.iter().all(|&w| w == 0.0));
        if decode.is_empty() || !frozen {
            return Err(format!("{variant}: decode steps wrote to memory"));
        }
    }
    Ok(format!(
        "1000 steps over {walks} walks, invariants held; {decode_steps} decode steps bit-identical"
    ))
}

// 4 and 7 -------------------------------------------------------------------

const SMOKE_BUDGET: Duration = Duration::from_secs(30 * 60);
const SMOKE_MAX_NLD: f64 = 0.35;

struct Smoke {
    summary: TrainSummary,
    elapsed: Duration,
    data: PathBuf,
    run: PathBuf,
}

fn smoke_config(dir: &Path) -> RunConfig {
    let mut cfg = RunConfig {
        task: Task::OddEven,
        model: ModelConfig {
            variant: Variant::DcwMann,
            hidden: 64,
            embed: 64,
            mem_slots: 32,
            word_size: 32,
            read_heads: 1,
            precision: Precision::F32,
            teacher_forcing: true,
            ..ModelConfig::default()
        },
        epochs: 50,
        eval_every: 1500,
        early_stop_patience: 10,
        monitor_count: 200,
        seeds: Seeds::all(1),
        data: DataPaths::in_dir(dir.join("data")),
        out_dir: dir.join("dcw_mann"),
        ..RunConfig::default()
    };
    cfg.gen.odd_even = OddEvenGen {
        train: 1500,
        valid: 0,
        test: 400,
        ..OddEvenGen::default()
    };
    cfg
}

fn smoke() -> &'static Smoke {
    static SMOKE: OnceLock<Smoke> = OnceLock::new();
    SMOKE.get_or_init(|| {
        let dir = artifacts().join("odd_even_smoke");
        let cfg = smoke_config(&dir);
        let start = Instant::now();
        gen_data(&cfg, &dir.join("data")).unwrap();
        let summary = train(&cfg, TrainOptions::default()).unwrap();
        Smoke {
            summary,
            elapsed: start.elapsed(),
            data: dir.join("data"),
            run: cfg.out_dir,
        }
    })
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn full_reproduction() -> Outcome {
    let dir = artifacts().join("odd_even_full");
    let variants = [Variant::DcwMann, Variant::Dnc, Variant::Seq2seq];
    let mut nlds = vec![Vec::new(); variants.len()];
    for seed in 1..=3u64 {
        let mut cfg = RunConfig {
            model: ModelConfig {
                hidden: 256,
                embed: 64,
                mem_slots: 128,
                word_size: 128,
                read_heads: 1,
                precision: Precision::F32,
                teacher_forcing: true,
                ..ModelConfig::default()
            },
            eval_every: 4000,
            seeds: Seeds::all(seed),
            data: DataPaths::in_dir(dir.join(format!("data_{seed}"))),
            ..RunConfig::default()
        };
        gen_data(&cfg, &dir.join(format!("data_{seed}"))).unwrap();
        for (k, &v) in variants.iter().enumerate() {
            cfg.model.variant = v;
            cfg.out_dir = dir.join(format!("{v}_{seed}"));
            let s = train(&cfg, TrainOptions::default()).unwrap();
            nlds[k].push(s.test.unwrap().mean_nld);
        }
    }
    let dcw_median = median(nlds[0].clone());
    let means: Vec<f64> = nlds.iter().map(|v| mean(v)).collect();
    check(
        dcw_median <= 0.20 && means[0] < means[1] && means[1] < means[2],
        format!(
            "full scale: dcw_mann median NLD {dcw_median:.3} (<= 0.20); means dcw_mann {:.3} < dnc {:.3} < seq2seq {:.3}",
            means[0], means[1], means[2]
        ),
    )
}

fn odd_even() -> Outcome {
    let s = smoke();
    let test = s.summary.test.as_ref().ok_or("smoke run produced no test report")?;
    let smoke_ok = test.mean_nld <= SMOKE_MAX_NLD && s.elapsed <= SMOKE_BUDGET;
    let smoke_line = format!(
        "smoke: dcw_mann test NLD {:.3} (<= {SMOKE_MAX_NLD}) in {:.0} s (<= {} s)",
        test.mean_nld,
        s.elapsed.as_secs_f64(),
        SMOKE_BUDGET.as_secs()
    );
    if std::env::var("DCMANN_FULL_REPRO").is_ok_and(|v| v == "1") {
        let full = full_reproduction();
        let ok = smoke_ok && full.is_ok();
        let (Ok(line) | Err(line)) = full;
        check(ok, format!("{smoke_line}; {line}"))
    } else {
        check(
            smoke_ok,
            format!("{smoke_line}; full-scale part SKIPPED (set DCMANN_FULL_REPRO=1)"),
        )
    }
}

fn read_modes() -> Outcome {
    let s = smoke();
    let ckpt = s.run.join("best.ckpt");
    let data = s.data.join("test.jsonl");
    let examples: Vec<usize> = (0..50).collect();
    let summary = inspect_checkpoint(&ckpt, &data, &examples, &s.run.join("inspect")).map_err(|e| e.to_string())?;
    let modes = &summary.read_modes;
    let (Some(enc), Some(dec)) = (modes.encode, modes.decode) else {
        return Err("missing encode or decode read modes".into());
    };
    let on_simplex = |p: [f64; 3]| p.iter().all(|&x| x >= 0.0) && (p.iter().sum::<f64>() - 1.0).abs() < 1e-6;
    let gap = modes.max_phase_gap().unwrap_or(0.0);
    check(
        on_simplex(enc) && on_simplex(dec) && gap >= 0.05 && summary.max_decode_write == 0.0,
        format!(
            "pi encode [{:.3}, {:.3}, {:.3}] decode [{:.3}, {:.3}, {:.3}], max gap {gap:.3} (>= 0.05); \
             max decode write {}",
            enc[0], enc[1], enc[2], dec[0], dec[1], dec[2], summary.max_decode_write
        ),
    )
}

// 5 -----------------------------------------------------------------------

fn fuzz_seq(rng: &mut impl Rng) -> Vec<usize> {
    let len = rng.gen_range(0..12);
    (0..len).map(|_| rng.gen_range(0..9)).collect()
}

fn metric_oracles() -> Outcome {
    let mut rng = support::rng(5);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let (a, b) = (fuzz_seq(&mut rng), fuzz_seq(&mut rng));
        let (ca, cb) = (support::content_tokens(&a), support::content_tokens(&b));
        if levenshtein(&a, &b) != support::levenshtein_recursive(&a, &b) {
            return Err(format!("levenshtein differs on {a:?} {b:?}"));
        }
        worst = worst.max((nld(&strip_control(&a), &strip_control(&b)) - support::nld_reference(&ca, &cb)).abs());
        worst = worst.max((set_precision(&a, &b) - support::precision_reference(&a, &b)).abs());
        worst = worst.max((jaccard(&a, &b) - support::jaccard_reference(&a, &b)).abs());
    }
    for _ in 0..500 {
        let (a, b, c) = (fuzz_seq(&mut rng), fuzz_seq(&mut rng), fuzz_seq(&mut rng));
        let d = |x: &[usize], y: &[usize]| levenshtein(x, y);
        let axioms = d(&a, &b) == d(&b, &a) && (d(&a, &b) == 0) == (a == b) && d(&a, &c) <= d(&a, &b) + d(&b, &c);
        if !axioms {
            return Err(format!("metric axioms fail on {a:?} {b:?} {c:?}"));
        }
    }
    check(
        worst <= 1e-12,
        format!("1000 pairs, worst gap {worst:.2e} (<= 1e-12); axioms hold on 500 triples"),
    )
}

// 6 -----------------------------------------------------------------------

fn emr_generator() -> EmrGenConfig {
    EmrGenConfig {
        patients: 600,
        visits: LengthDist::new(2.5, 8),
        diagnosis_len: LengthDist::new(13.3, 30),
        treatment_len: LengthDist::new(4.7, 15),
        diagnosis_vocab: 400,
        treatment_vocab: 200,
        conditions: 40,
        ..EmrGenConfig::procedure()
    }
}

fn emr() -> Outcome {
    let dir = artifacts().join("emr_procedure");
    let variants = [Variant::DcwMann, Variant::Seq2seq];
    let (mut prec, mut jac) = (vec![Vec::new(); 3], vec![Vec::new(); 3]);
    for seed in 1..=3u64 {
        let data = dir.join(format!("data_{seed}"));
        let mut cfg = RunConfig {
            task: Task::EmrProcedure,
            model: ModelConfig {
                hidden: 64,
                embed: 32,
                mem_slots: 48,
                word_size: 32,
                read_heads: 1,
                precision: Precision::F32,
                teacher_forcing: true,
                ..ModelConfig::default()
            },
            epochs: 30,
            eval_every: 2000,
            early_stop_patience: 0,
            seeds: Seeds::all(seed),
            data: DataPaths::in_dir(&data),
            ..RunConfig::default()
        };
        cfg.gen.emr = Some(emr_generator());
        gen_data(&cfg, &data).map_err(|e| e.to_string())?;
        for (k, &v) in variants.iter().enumerate() {
            cfg.model.variant = v;
            cfg.out_dir = dir.join(format!("{v}_{seed}"));
            let s = train(&cfg, TrainOptions::default()).map_err(|e| e.to_string())?;
            let t = s.test.ok_or("no test report")?;
            prec[k].push(t.mean_precision);
            jac[k].push(t.mean_jaccard);
        }
        let train_pairs = read_jsonl(&data.join("train.jsonl")).map_err(|e| e.to_string())?;
        let test_pairs = read_jsonl(&data.join("test.jsonl")).map_err(|e| e.to_string())?;
        let prior = FrequencyPrior::fit(train_pairs.iter().map(|p| p.target.as_slice()));
        let n = test_pairs.len() as f64;
        prec[2].push(
            test_pairs
                .iter()
                .map(|p| set_precision(prior.predict(), &p.target))
                .sum::<f64>()
                / n,
        );
        jac[2].push(
            test_pairs
                .iter()
                .map(|p| jaccard(prior.predict(), &p.target))
                .sum::<f64>()
                / n,
        );
    }
    let p: Vec<f64> = prec.into_iter().map(median).collect();
    let j: Vec<f64> = jac.into_iter().map(median).collect();
    let ok = p[0] > p[1] && j[0] > j[1] && p[1] > p[2] && j[1] > j[2];
    check(
        ok,
        format!(
            "medians over 3 seeds: precision dcw_mann {:.3} > seq2seq {:.3} > prior {:.3}; \
             jaccard {:.3} > {:.3} > {:.3}; curves in {}/*/metrics.csv",
            p[0],
            p[1],
            p[2],
            j[0],
            j[1],
            j[2],
            dir.display()
        ),
    )
}

// 8 -----------------------------------------------------------------------

fn tiny_run(dir: &Path) -> RunConfig {
    let mut cfg = RunConfig {
        model: ModelConfig {
            variant: Variant::DcwMann,
            hidden: 8,
            embed: 4,
            mem_slots: 6,
            word_size: 4,
            ..ModelConfig::default()
        },
        epochs: 3,
        eval_every: 7,
        read_mode_every: 3,
        seeds: Seeds::all(8),
        data: DataPaths::in_dir(dir.join("data")),
        out_dir: dir.join("run"),
        ..RunConfig::default()
    };
    cfg.gen.odd_even = OddEvenGen {
        train: 12,
        valid: 4,
        test: 4,
        min_len: 1,
        max_len: 5,
    };
    cfg
}

fn determinism() -> Outcome {
    let root = artifacts().join("determinism");
    let run = |name: &str, opts: TrainOptions| -> std::result::Result<RunConfig, String> {
        let cfg = tiny_run(&root.join(name));
        gen_data(&cfg, &root.join(name).join("data")).map_err(|e| e.to_string())?;
        train(&cfg, opts).map_err(|e| e.to_string())?;
        Ok(cfg)
    };
    let read = |p: PathBuf| std::fs::read(&p).map_err(|e| format!("{}: {e}", p.display()));

    let a = run("a", TrainOptions::default())?;
    let b = run("b", TrainOptions::default())?;
    let csv_same = read(a.out_dir.join("metrics.csv"))? == read(b.out_dir.join("metrics.csv"))?;

    let saved = read(a.out_dir.join("best.ckpt"))?;
    let again = match decode_checkpoint(&saved).map_err(|e| e.to_string())? {
        AnyCheckpoint::F32(c) => encode_checkpoint(&c),
        AnyCheckpoint::F64(c) => encode_checkpoint(&c),
    };
    let idempotent = saved == again;

    let c = tiny_run(&root.join("c"));
    gen_data(&c, &root.join("c").join("data")).map_err(|e| e.to_string())?;
    let paused = train(
        &c,
        TrainOptions {
            resume: false,
            pause_at: Some(17),
        },
    )
    .map_err(|e| e.to_string())?;
    let resumed = train(
        &c,
        TrainOptions {
            resume: true,
            pause_at: None,
        },
    )
    .map_err(|e| e.to_string())?;
    let (whole, split) = (
        load_checkpoint(&a.out_dir.join("latest.ckpt")).map_err(|e| e.to_string())?,
        load_checkpoint(&c.out_dir.join("latest.ckpt")).map_err(|e| e.to_string())?,
    );
    let state_same = match (whole, split) {
        (AnyCheckpoint::F64(x), AnyCheckpoint::F64(y)) => x.params == y.params && x.adam == y.adam,
        (AnyCheckpoint::F32(x), AnyCheckpoint::F32(y)) => x.params == y.params && x.adam == y.adam,
        _ => false,
    };
    let resume_same = paused.paused
        && resumed.resumed_from == Some(17)
        && state_same
        && read(a.out_dir.join("metrics.csv"))? == read(c.out_dir.join("metrics.csv"))?
        && read(a.out_dir.join("read_modes.jsonl"))? == read(c.out_dir.join("read_modes.jsonl"))?;
    check(
        csv_same && idempotent && resume_same,
        format!(
            "metrics CSV identical: {csv_same}; checkpoint save/load/save idempotent: {idempotent}; \
             resume at step 17 matches uninterrupted run: {resume_same}"
        ),
    )
}

// -------------------------------------------------------------------------

fn main() -> ExitCode {
    let criteria: [(u32, &str, fn() -> Outcome); 8] = [
        (1, "gradient integrity", gradients),
        (2, "memory mechanics oracle", memory_oracle),
        (3, "memory invariant fuzz", invariant_fuzz),
        (4, "odd-even reproduction", odd_even),
        (5, "metric oracles", metric_oracles),
        (6, "synthetic EMR comparison", emr),
        (7, "read-mode instrumentation", read_modes),
        (8, "determinism and persistence", determinism),
    ];
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    if std::fs::create_dir_all(artifacts()).is_err() {
        eprintln!("cannot create {}", artifacts().display());
        return ExitCode::FAILURE;
    }
    let mut failed = 0;
    for (n, name, run) in criteria {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        let line = match &outcome {
            Ok(d) => format!("[PASS] criterion {n} {name}: {d} [{secs:.1} s]"),
            Err(d) => {
                failed += 1;
                format!("[FAIL] criterion {n} {name}: {d} [{secs:.1} s]")
            }
        };
        println!("{line}");
        let _ = std::io::stdout().flush();
    }
    if failed > 0 {
        println!("acceptance: {failed} criterion(s) failed");
        ExitCode::FAILURE
    } else {
        println!("acceptance: all selected criteria passed");
        ExitCode::SUCCESS
    }
}
