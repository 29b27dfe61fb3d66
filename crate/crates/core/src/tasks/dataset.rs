use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::vocab::{VocabFile, END_ID, SEP_ID};
use super::{invalid, Result, TaskError};

/// One training example as token ids. Inputs end with `%`, targets with `∅`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequencePair {
    pub input: Vec<usize>,
    pub target: Vec<usize>,
}

impl SequencePair {
    pub fn validate(&self, vocab: &VocabFile) -> Result<()> {
        if self.input.last() != Some(&SEP_ID) {
            return Err(invalid("input must be non-empty and end with `%`"));
        }
        if self.target.last() != Some(&END_ID) {
            return Err(invalid("target must end with `∅`"));
        }
        for (ids, size) in [(&self.input, vocab.input.len()), (&self.target, vocab.output.len())] {
            if let Some(&id) = ids.iter().find(|&&i| i >= size) {
                return Err(TaskError::UnknownId { id, size });
            }
        }
        Ok(())
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TaskError + '_ {
    move |source| TaskError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_jsonl(path: &Path, pairs: &[SequencePair]) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    for p in pairs {
        serde_json::to_writer(&mut out, p).map_err(|e| io_err(path)(e.into()))?;
        out.write_all(b"\n").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

/// Reads a dataset; blank lines are ignored, anything else malformed is an
/// error naming the line.
pub fn read_jsonl(path: &Path) -> Result<Vec<SequencePair>> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut pairs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let pair = serde_json::from_str(&line).map_err(|e| TaskError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        pairs.push(pair);
    }
    Ok(pairs)
}

pub fn write_vocab(path: &Path, vocab: &VocabFile) -> Result<()> {
    let mut s = serde_json::to_string_pretty(vocab).expect("vocabulary serializes");
    s.push('\n');
    std::fs::write(path, s).map_err(io_err(path))
}

pub fn read_vocab(path: &Path) -> Result<VocabFile> {
    let s = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&s).map_err(|e| TaskError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        msg: e.to_string(),
    })
}
