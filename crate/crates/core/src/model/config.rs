use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::autodiff::Precision;
use crate::memory::{DecodeFreeze, MemoryShape};
use crate::tasks::vocab::{END_ID, GO_ID};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Seq2seq,
    Dnc,
    DncWp,
    DcMann,
    DcwMann,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Seq2seq,
        Variant::Dnc,
        Variant::DncWp,
        Variant::DcMann,
        Variant::DcwMann,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Seq2seq => "seq2seq",
            Variant::Dnc => "dnc",
            Variant::DncWp => "dnc_wp",
            Variant::DcMann => "dc_mann",
            Variant::DcwMann => "dcw_mann",
        }
    }

    pub fn has_memory(self) -> bool {
        self != Variant::Seq2seq
    }

    pub fn dual_controller(self) -> bool {
        matches!(self, Variant::Seq2seq | Variant::DcMann | Variant::DcwMann)
    }

    pub fn write_protected(self) -> bool {
        matches!(self, Variant::DncWp | Variant::DcwMann)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == norm)
            .ok_or_else(|| ModelError::UnknownVariant(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub hidden: usize,
    pub embed: usize,
    pub mem_slots: usize,
    pub word_size: usize,
    pub read_heads: usize,
    /// Filled from the dataset vocabulary when left at zero.
    pub input_vocab: usize,
    pub output_vocab: usize,
    /// Inference stops after this many emitted tokens. Zero asks the
    /// training harness to use twice the longest training target.
    pub max_decode_len: usize,
    pub teacher_forcing: bool,
    pub precision: Precision,
    pub decode_freeze: DecodeFreeze,
    pub go_token: usize,
    pub end_token: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::DcwMann,
            hidden: 256,
            embed: 64,
            mem_slots: 128,
            word_size: 128,
            read_heads: 1,
            input_vocab: 0,
            output_vocab: 0,
            max_decode_len: 0,
            teacher_forcing: false,
            precision: Precision::F64,
            decode_freeze: DecodeFreeze::All,
            go_token: GO_ID,
            end_token: END_ID,
        }
    }
}

impl ModelConfig {
    pub fn memory_shape(&self) -> MemoryShape {
        MemoryShape::new(self.mem_slots, self.word_size, self.read_heads)
    }

    /// Width of the read vector block fed back to the controller.
    pub fn read_width(&self) -> usize {
        if self.variant.has_memory() {
            self.read_heads * self.word_size
        } else {
            0
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let mut bad = Vec::new();
        for (name, v) in [
            ("hidden", self.hidden),
            ("embed", self.embed),
            ("input_vocab", self.input_vocab),
            ("output_vocab", self.output_vocab),
            ("max_decode_len", self.max_decode_len),
        ] {
            if v == 0 {
                bad.push(name);
            }
        }
        if self.variant.has_memory() {
            for (name, v) in [
                ("mem_slots", self.mem_slots),
                ("word_size", self.word_size),
                ("read_heads", self.read_heads),
            ] {
                if v == 0 {
                    bad.push(name);
                }
            }
        }
        if !bad.is_empty() {
            return Err(ModelError::InvalidConfig(format!(
                "must be positive: {}",
                bad.join(", ")
            )));
        }
        if self.go_token >= self.output_vocab || self.end_token >= self.output_vocab {
            return Err(ModelError::InvalidConfig(format!(
                "GO ({}) and end ({}) tokens must lie in the output vocabulary of size {}",
                self.go_token, self.end_token, self.output_vocab
            )));
        }
        Ok(())
    }
}
