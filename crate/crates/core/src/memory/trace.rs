use std::io::Write;

use serde::{Deserialize, Serialize};

use super::Phase;

/// Per-step snapshot of the addressing state, one JSON object per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryTraceRecord {
    pub step: usize,
    pub phase: Phase,
    pub write_weights: Vec<f64>,
    pub read_weights: Vec<Vec<f64>>,
    /// Per head `[backward, content, forward]`.
    pub read_modes: Vec<[f64; 3]>,
    pub usage: Vec<f64>,
}

pub fn write_trace_jsonl<W: Write>(mut out: W, records: &[MemoryTraceRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
