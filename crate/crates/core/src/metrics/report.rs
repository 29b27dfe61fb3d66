use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{jaccard, nld, set_precision, strip_control, MetricsError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub example_id: usize,
    pub predicted: Vec<usize>,
    pub target: Vec<usize>,
    pub nld: f64,
    pub precision: f64,
    pub jaccard: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub count: usize,
    pub mean_nld: f64,
    pub mean_precision: f64,
    pub mean_jaccard: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub summary: ReportSummary,
    pub examples: Vec<ExampleRecord>,
}

impl EvalReport {
    /// Scores `(prediction, target)` pairs after stripping control tokens.
    pub fn from_pairs<'a, I>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (&'a [usize], &'a [usize])>,
    {
        let examples: Vec<ExampleRecord> = pairs
            .into_iter()
            .enumerate()
            .map(|(i, (p, t))| {
                let (p, t) = (strip_control(p), strip_control(t));
                ExampleRecord {
                    example_id: i,
                    nld: nld(&p, &t),
                    precision: set_precision(&p, &t),
                    jaccard: jaccard(&p, &t),
                    predicted: p,
                    target: t,
                }
            })
            .collect();
        let n = examples.len();
        let mean = |f: fn(&ExampleRecord) -> f64| {
            if n == 0 {
                0.0
            } else {
                examples.iter().map(f).sum::<f64>() / n as f64
            }
        };
        Self {
            summary: ReportSummary {
                count: n,
                mean_nld: mean(|e| e.nld),
                mean_precision: mean(|e| e.precision),
                mean_jaccard: mean(|e| e.jaccard),
            },
            examples,
        }
    }

    pub fn write_json<W: Write>(&self, mut out: W) -> Result<(), MetricsError> {
        serde_json::to_writer_pretty(&mut out, self).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
        Ok(())
    }

    /// Columns `example_id,nld,precision,jaccard`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), MetricsError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["example_id", "nld", "precision", "jaccard"])?;
        for e in &self.examples {
            w.write_record([
                e.example_id.to_string(),
                e.nld.to_string(),
                e.precision.to_string(),
                e.jaccard.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Always predicts the `k` most frequent training treatments, `k` being the
/// rounded mean target length. Ties go to the lower id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyPrior {
    pub codes: Vec<usize>,
}

impl FrequencyPrior {
    pub fn fit<'a, I>(targets: I) -> Self
    where
        I: IntoIterator<Item = &'a [usize]>,
    {
        let mut counts: Vec<usize> = Vec::new();
        let (mut total_len, mut n) = (0usize, 0usize);
        for t in targets {
            let t = strip_control(t);
            total_len += t.len();
            n += 1;
            for &c in &t {
                if c >= counts.len() {
                    counts.resize(c + 1, 0);
                }
                counts[c] += 1;
            }
        }
        let k = if n == 0 {
            0
        } else {
            (total_len as f64 / n as f64).round() as usize
        };
        let mut ranked: Vec<usize> = (0..counts.len()).filter(|&c| counts[c] > 0).collect();
        ranked.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
        ranked.truncate(k);
        Self { codes: ranked }
    }

    pub fn predict(&self) -> &[usize] {
        &self.codes
    }
}
