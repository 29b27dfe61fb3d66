use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::admission::{Patient, Visit};
use super::{invalid, Result};

/// Target mean and hard maximum of a length distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthDist {
    pub mean: f64,
    pub max: usize,
}

impl LengthDist {
    pub const fn new(mean: f64, max: usize) -> Self {
        Self { mean, max }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmrGenConfig {
    pub patients: usize,
    /// Visits per patient; at least 2.
    pub visits: LengthDist,
    pub diagnosis_len: LengthDist,
    pub treatment_len: LengthDist,
    pub diagnosis_vocab: usize,
    pub treatment_vocab: usize,
    /// Number of latent conditions.
    pub conditions: usize,
    /// Chance that a visit adds one short-lived condition.
    pub acute_rate: f64,
    /// Chance that any emitted code is replaced by a uniform random one.
    pub noise: f64,
    pub treatment_prefix: String,
}

impl Default for EmrGenConfig {
    fn default() -> Self {
        Self::procedure()
    }
}

impl EmrGenConfig {
    /// Procedure-style cohort.
    pub fn procedure() -> Self {
        Self {
            patients: 5000,
            visits: LengthDist::new(2.5, 29),
            diagnosis_len: LengthDist::new(13.3, 39),
            treatment_len: LengthDist::new(4.7, 40),
            diagnosis_vocab: 4669,
            treatment_vocab: 1439,
            conditions: 250,
            acute_rate: 0.5,
            noise: 0.05,
            treatment_prefix: "P".to_string(),
        }
    }

    /// Drug-style cohort.
    pub fn drug() -> Self {
        Self {
            visits: LengthDist::new(2.6, 29),
            diagnosis_len: LengthDist::new(13.8, 39),
            treatment_len: LengthDist::new(11.4, 186),
            diagnosis_vocab: 4563,
            treatment_vocab: 2446,
            treatment_prefix: "R".to_string(),
            ..Self::procedure()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patients == 0 {
            return Err(invalid("patients must be positive"));
        }
        for (name, d, min) in [
            ("visits", self.visits, 2),
            ("diagnosis_len", self.diagnosis_len, 1),
            ("treatment_len", self.treatment_len, 1),
        ] {
            if !(d.mean >= min as f64 && d.mean <= d.max as f64) {
                return Err(invalid(format!(
                    "{name}: mean {} must lie in [{min}, {}]",
                    d.mean, d.max
                )));
            }
        }
        if self.treatment_len.max < 2 {
            return Err(invalid("treatment_len.max must be at least 2"));
        }
        if self.conditions < 5 {
            return Err(invalid("need at least 5 latent conditions"));
        }
        for (name, p) in [("acute_rate", self.acute_rate), ("noise", self.noise)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if self.diagnosis_vocab < self.diagnosis_len.max {
            return Err(invalid(format!(
                "diagnosis vocabulary of {} cannot fill a condition block of {}",
                self.diagnosis_vocab, self.diagnosis_len.max
            )));
        }
        if self.treatment_vocab < self.treatment_len.max {
            return Err(invalid(format!(
                "treatment vocabulary of {} cannot fill a condition block of {}",
                self.treatment_vocab, self.treatment_len.max
            )));
        }
        Ok(())
    }
}

/// Geometric distribution restricted to `min..=max`, `P(k) ∝ q^(k - min)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedGeometric {
    pub min: usize,
    pub max: usize,
    pub log_q: f64,
    cdf: Vec<f64>,
}

impl TruncatedGeometric {
    fn with_log_q(min: usize, max: usize, log_q: f64) -> Self {
        let top = log_q.max(0.0) * (max - min) as f64;
        let w: Vec<f64> = (0..=max - min).map(|i| (log_q * i as f64 - top).exp()).collect();
        let total: f64 = w.iter().sum();
        let mut acc = 0.0;
        let cdf = w
            .iter()
            .map(|x| {
                acc += x / total;
                acc
            })
            .collect();
        Self { min, max, log_q, cdf }
    }

    pub fn mean(&self) -> f64 {
        let mut prev = 0.0;
        let mut m = 0.0;
        for (i, c) in self.cdf.iter().enumerate() {
            m += (self.min + i) as f64 * (c - prev);
            prev = *c;
        }
        m
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let i = self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1);
        self.min + i
    }
}

/// Fits `q` by bisection so the mean matches `mean`.
pub fn fit_truncated_geometric(mean: f64, min: usize, max: usize) -> Result<TruncatedGeometric> {
    if max < min || !(mean >= min as f64 && mean <= max as f64) {
        return Err(invalid(format!("mean {mean} outside [{min}, {max}]")));
    }
    if min == max {
        return Ok(TruncatedGeometric::with_log_q(min, max, 0.0));
    }
    let (mut lo, mut hi) = (-60.0, 60.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if TruncatedGeometric::with_log_q(min, max, mid).mean() < mean {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(TruncatedGeometric::with_log_q(min, max, 0.5 * (lo + hi)))
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Stream keyed by a condition set, so equal sets draw equal lengths.
fn set_rng(seed: u64, tag: u64, set: &[usize]) -> ChaCha8Rng {
    let mut h = splitmix(seed ^ tag.wrapping_mul(0xA24B_AED4_963E_E407));
    for &c in set {
        h = splitmix(h ^ c as u64);
    }
    ChaCha8Rng::seed_from_u64(h)
}

/// Round-robin over `blocks`, skipping repeats, until `len` codes.
fn interleave(blocks: &[&[usize]], len: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(len);
    let longest = blocks.iter().map(|b| b.len()).max().unwrap_or(0);
    'outer: for pos in 0..longest {
        for b in blocks {
            if let Some(&code) = b.get(pos) {
                if !out.contains(&code) {
                    out.push(code);
                    if out.len() == len {
                        break 'outer;
                    }
                }
            }
        }
    }
    out
}

pub(crate) struct Generated {
    pub patients: Vec<Patient>,
    /// Latent condition set of every visit.
    #[cfg_attr(not(test), allow(dead_code))]
    pub conditions: Vec<Vec<Vec<usize>>>,
}

/// Synthetic cohort from a latent-condition model. Each patient carries 1-4
/// chronic conditions, sometimes joined by one acute condition per visit.
/// Every condition owns a fixed diagnosis block and treatment block;
/// diagnoses interleave the blocks of the visit's conditions in condition
/// order, treatments do the same for treatment blocks and pick up the first
/// treatment of the previous visit.
pub fn gen_synthetic_emr(config: &EmrGenConfig, seed: u64) -> Result<Vec<Patient>> {
    Ok(generate(config, seed)?.patients)
}

pub(crate) fn generate(config: &EmrGenConfig, seed: u64) -> Result<Generated> {
    config.validate()?;
    let visits_dist = fit_truncated_geometric(config.visits.mean, 2, config.visits.max)?;
    let diag_dist = fit_truncated_geometric(config.diagnosis_len.mean, 1, config.diagnosis_len.max)?;
    let treat_dist = fit_truncated_geometric(config.treatment_len.mean, 1, config.treatment_len.max)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let diag_blocks: Vec<Vec<usize>> = (0..config.conditions)
        .map(|_| index::sample(&mut rng, config.diagnosis_vocab, config.diagnosis_len.max).into_vec())
        .collect();
    let treat_blocks: Vec<Vec<usize>> = (0..config.conditions)
        .map(|_| index::sample(&mut rng, config.treatment_vocab, config.treatment_len.max).into_vec())
        .collect();
    // Mildly skewed prevalence, so some treatments are far more common.
    let prevalence =
        WeightedIndex::new((0..config.conditions).map(|c| 1.0 / ((c + 1) as f64).sqrt())).expect("positive weights");

    let diag_code = |c: usize| format!("D{c:04}");
    let treat_code = |c: usize| format!("{}{c:04}", config.treatment_prefix);

    let mut patients = Vec::with_capacity(config.patients);
    let mut latent = Vec::with_capacity(config.patients);
    for pid in 0..config.patients {
        let n_visits = visits_dist.sample(&mut rng);
        let n_chronic = rng.gen_range(1..=4);
        let mut chronic: Vec<usize> = Vec::with_capacity(n_chronic);
        while chronic.len() < n_chronic {
            let c = prevalence.sample(&mut rng);
            if !chronic.contains(&c) {
                chronic.push(c);
            }
        }
        let mut visits: Vec<Visit> = Vec::with_capacity(n_visits);
        let mut sets = Vec::with_capacity(n_visits);
        for _ in 0..n_visits {
            let mut set = chronic.clone();
            if rng.gen_bool(config.acute_rate) {
                loop {
                    let c = rng.gen_range(0..config.conditions);
                    if !set.contains(&c) {
                        set.push(c);
                        break;
                    }
                }
            }
            set.sort_unstable();

            let d_len = diag_dist.sample(&mut set_rng(seed, 1, &set));
            let blocks: Vec<&[usize]> = set.iter().map(|&c| diag_blocks[c].as_slice()).collect();
            let mut diag = interleave(&blocks, d_len);
            for code in &mut diag {
                if rng.gen_bool(config.noise) {
                    *code = rng.gen_range(0..config.diagnosis_vocab);
                }
            }

            let t_len = treat_dist.sample(&mut set_rng(seed, 2, &set));
            let blocks: Vec<&[usize]> = set.iter().map(|&c| treat_blocks[c].as_slice()).collect();
            let mut treat: Vec<String> = interleave(&blocks, t_len)
                .into_iter()
                .map(|code| {
                    if rng.gen_bool(config.noise) {
                        treat_code(rng.gen_range(0..config.treatment_vocab))
                    } else {
                        treat_code(code)
                    }
                })
                .collect();
            if let Some(carried) = visits.last().and_then(|v| v.treatments.first()) {
                if !treat.contains(carried) {
                    if treat.len() >= 2 {
                        *treat.last_mut().expect("non-empty") = carried.clone();
                    } else {
                        treat.push(carried.clone());
                    }
                }
            }
            visits.push(Visit {
                diagnoses: diag.into_iter().map(diag_code).collect(),
                treatments: treat,
            });
            sets.push(set);
        }
        patients.push(Patient {
            id: format!("S{pid:06}"),
            visits,
        });
        latent.push(sets);
    }
    Ok(Generated {
        patients,
        conditions: latent,
    })
}
