//! Browser bindings for three memory-addressing views: allocation
//! weighting, content weighting and per-step write weights of an
//! untrained network.

use dcmann::autodiff::{Precision, Tape};
use dcmann::memory::{allocation_weighting, content_weighting, Phase};
use dcmann::model::{Model, ModelConfig, Variant};
use dcmann::tasks::odd_even_vocab;
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn allocation(usage: &[f64]) -> Result<Vec<f64>, String> {
    if usage.is_empty() {
        return Err("usage is empty".into());
    }
    if let Some(u) = usage.iter().find(|u| !(0.0..=1.0).contains(*u)) {
        return Err(format!("usage {u} outside [0, 1]"));
    }
    let mut tape = Tape::<f64>::new();
    let u = tape.vector(usage.to_vec());
    let a = allocation_weighting(&mut tape, u).map_err(|e| e.to_string())?;
    Ok(tape.value(a).to_vec())
}

fn content(memory: &[f64], word: usize, key: &[f64], beta: f64) -> Result<Vec<f64>, String> {
    if word == 0 || memory.is_empty() || memory.len() % word != 0 || key.len() != word {
        return Err(format!(
            "memory of {} values does not split into rows of the key length {}",
            memory.len(),
            key.len()
        ));
    }
    let mut tape = Tape::<f64>::new();
    let m = tape
        .leaf(vec![memory.len() / word, word], memory.to_vec(), false)
        .map_err(|e| e.to_string())?;
    let k = tape.vector(key.to_vec());
    let b = tape.vector(vec![beta]);
    let w = content_weighting(&mut tape, m, k, b).map_err(|e| e.to_string())?;
    Ok(tape.value(w).to_vec())
}

#[derive(Serialize)]
struct TraceStep {
    phase: Phase,
    write: Vec<f64>,
    usage: Vec<f64>,
    read_modes: [f64; 3],
}

#[derive(Serialize)]
struct Trace {
    variant: String,
    output: Vec<u32>,
    steps: Vec<TraceStep>,
}

fn trace(variant: &str, odds: &[u32], seed: u64) -> Result<String, String> {
    let variant: Variant = variant.parse().map_err(|e: dcmann::model::ModelError| e.to_string())?;
    if !variant.has_memory() {
        return Err(format!("variant `{variant}` has no memory to trace"));
    }
    let vocab = odd_even_vocab();
    let words: Vec<String> = odds.iter().map(u32::to_string).collect();
    if words.is_empty() {
        return Err("enter at least one odd number".into());
    }
    let mut input = vocab.input.encode(&words).map_err(|e| e.to_string())?;
    input.push(vocab.input.id("%").expect("separator"));
    let config = ModelConfig {
        variant,
        hidden: 16,
        embed: 8,
        mem_slots: 12,
        word_size: 8,
        read_heads: 1,
        input_vocab: vocab.input.len(),
        output_vocab: vocab.output.len(),
        max_decode_len: odds.len() + 1,
        precision: Precision::F64,
        ..ModelConfig::default()
    };
    let model = Model::<f64>::new(config, seed).map_err(|e| e.to_string())?;
    let (ids, records) = model.predict_traced(&input, None, true).map_err(|e| e.to_string())?;
    let output = ids
        .iter()
        .filter_map(|&i| vocab.output.token(i))
        .filter_map(|t| t.parse().ok())
        .collect();
    let steps = records
        .into_iter()
        .map(|r| TraceStep {
            phase: r.phase,
            write: r.write_weights,
            usage: r.usage,
            read_modes: r.read_modes[0],
        })
        .collect();
    let trace = Trace {
        variant: variant.to_string(),
        output,
        steps,
    };
    serde_json::to_string(&trace).map_err(|e| e.to_string())
}

/// Allocation weighting of a usage vector.
#[wasm_bindgen(js_name = allocationWeighting)]
pub fn allocation_weighting_js(usage: &[f64]) -> Result<Vec<f64>, JsError> {
    allocation(usage).map_err(|e| JsError::new(&e))
}

/// Softmax of `beta * cos(row, key)` over the rows of `memory`
/// (row-major, `word` columns).
#[wasm_bindgen(js_name = contentWeighting)]
pub fn content_weighting_js(memory: &[f64], word: usize, key: &[f64], beta: f64) -> Result<Vec<f64>, JsError> {
    content(memory, word, key, beta).map_err(|e| JsError::new(&e))
}

/// JSON trace of an untrained network run on a list of odd numbers.
#[wasm_bindgen(js_name = writeTrace)]
pub fn write_trace_js(variant: &str, odds: &[u32], seed: u64) -> Result<String, JsError> {
    trace(variant, odds, seed).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = oddEvenTarget)]
pub fn odd_even_target_js(odds: &[u32]) -> Vec<u32> {
    dcmann::tasks::odd_even_target(odds)
}
