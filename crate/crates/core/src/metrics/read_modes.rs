use std::io::BufRead;

use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::memory::Phase;

/// One line of a read-mode log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadModeRecord {
    pub step: usize,
    pub phase: Phase,
    #[serde(default)]
    pub head: usize,
    /// `[backward, content, forward]`.
    pub pi: [f64; 3],
}

#[derive(Deserialize)]
struct Loose {
    phase: Phase,
    pi: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadModeSummary {
    pub encode: Option<[f64; 3]>,
    pub decode: Option<[f64; 3]>,
    pub encode_count: usize,
    pub decode_count: usize,
    pub skipped: usize,
}

impl ReadModeSummary {
    /// Largest per-mode gap between the encode and decode means.
    pub fn max_phase_gap(&self) -> Option<f64> {
        let (e, d) = (self.encode?, self.decode?);
        Some((0..3).map(|k| (e[k] - d[k]).abs()).fold(0.0, f64::max))
    }
}

/// Mean `pi` per phase over a JSON Lines log. Lines that do not parse or
/// whose `pi` is off the simplex are skipped and counted.
pub fn aggregate_read_modes<R: BufRead>(log: R) -> Result<ReadModeSummary, MetricsError> {
    let mut sums = [[0.0f64; 3]; 2];
    let mut counts = [0usize; 2];
    let mut skipped = 0;
    for line in log.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = match serde_json::from_str::<Loose>(&line) {
            Ok(r)
                if r.pi.iter().all(|p| p.is_finite() && *p >= -1e-9)
                    && (r.pi.iter().sum::<f64>() - 1.0).abs() < 1e-6 =>
            {
                r
            }
            _ => {
                skipped += 1;
                continue;
            }
        };
        let k = usize::from(rec.phase == Phase::Decode);
        for m in 0..3 {
            sums[k][m] += rec.pi[m];
        }
        counts[k] += 1;
    }
    if counts == [0, 0] {
        return Err(MetricsError::EmptyLog { skipped });
    }
    let mean = |k: usize| (counts[k] > 0).then(|| sums[k].map(|s| s / counts[k] as f64));
    Ok(ReadModeSummary {
        encode: mean(0),
        decode: mean(1),
        encode_count: counts[0],
        decode_count: counts[1],
        skipped,
    })
}
