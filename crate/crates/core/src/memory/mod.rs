//! External memory with content addressing, dynamic allocation and temporal
//! linkage, plus the write-protected update used while decoding.
//!
//! All quantities are recorded on a [`Tape`] so gradients flow through every
//! addressing step. [`MemoryState`] is the plain-value snapshot of the same
//! state, used for initialization, inspection and invariant checks.

mod interface;
mod state;
mod trace;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Real, Result, Tape, Var};

pub use interface::{parse_interface, parse_interface_values, InterfaceVars, InterfaceVector};
pub use state::{InvariantViolation, MemoryState, MemoryVars, INITIAL_CONTENT};
pub use trace::{write_trace_jsonl, MemoryTraceRecord};

/// Memory geometry: `slots` locations (N) of `word` entries (D), read by
/// `read_heads` heads (R).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryShape {
    pub slots: usize,
    pub word: usize,
    pub read_heads: usize,
}

impl MemoryShape {
    pub fn new(slots: usize, word: usize, read_heads: usize) -> Self {
        Self {
            slots,
            word,
            read_heads,
        }
    }

    /// Length of the raw controller emission: `(R + 3) D + 5 R + 3`.
    pub fn interface_len(&self) -> usize {
        (self.read_heads + 3) * self.word + 5 * self.read_heads + 3
    }
}

/// Which branch of the memory update applies at a time step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    /// Reading the input sequence; memory is writable.
    Encode,
    /// Emitting the output sequence; writes are suppressed when protected.
    Decode,
}

/// What a write-protected decode step holds fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DecodeFreeze {
    /// Contents, usage, precedence and links all carry over; the write
    /// weighting is zero.
    #[default]
    All,
    /// Only the contents are held; usage, precedence and links keep updating
    /// from the computed write weighting.
    ContentsOnly,
}

/// Softmax over locations of `strength * cos(M(i), key)`.
pub fn content_weighting<T: Real>(tape: &mut Tape<T>, mem: Var, key: Var, strength: Var) -> Result<Var> {
    let sim = tape.cosine_rows(mem, key)?;
    let sharp = tape.mul_scalar(sim, strength)?;
    tape.softmax(sharp)
}

/// `u = (u_prev + w_prev - u_prev ∘ w_prev) ∘ Π_k (1 - f_k w_r_prev_k)`.
pub fn update_usage<T: Real>(
    tape: &mut Tape<T>,
    usage_prev: Var,
    write_prev: Var,
    read_prev: &[Var],
    free_gates: &[Var],
) -> Result<Var> {
    let mut retention: Option<Var> = None;
    for (w, f) in read_prev.iter().zip(free_gates) {
        let freed = tape.mul_scalar(*w, *f)?;
        let keep = tape.one_minus(freed);
        retention = Some(match retention {
            Some(r) => tape.mul(r, keep)?,
            None => keep,
        });
    }
    let overlap = tape.mul(usage_prev, write_prev)?;
    let sum = tape.add(usage_prev, write_prev)?;
    let usage = tape.sub(sum, overlap)?;
    match retention {
        Some(r) => tape.mul(usage, r),
        None => Ok(usage),
    }
}

/// Ascending order of `usage`, ties broken by lowest index.
pub fn free_list<T: Real>(usage: &[T]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..usage.len()).collect();
    order.sort_by(|&a, &b| usage[a].partial_cmp(&usage[b]).unwrap_or(std::cmp::Ordering::Equal));
    order
}

/// Allocation weighting: with `Φ` the free list,
/// `a[Φ[j]] = (1 - u[Φ[j]]) Π_{i<j} u[Φ[i]]`.
///
/// The sort permutation is a constant of the backward pass; gradients flow
/// only through the gathered usage values.
pub fn allocation_weighting<T: Real>(tape: &mut Tape<T>, usage: Var) -> Result<Var> {
    let order = free_list(tape.value(usage));
    let mut inverse = vec![0; order.len()];
    for (rank, &loc) in order.iter().enumerate() {
        inverse[loc] = rank;
    }
    let sorted = tape.gather(usage, &order)?;
    let prefix = tape.cumprod_exclusive(sorted)?;
    let free = tape.one_minus(sorted);
    let alloc_sorted = tape.mul(free, prefix)?;
    tape.gather(alloc_sorted, &inverse)
}

/// `w_w = g_w [g_a a + (1 - g_a) w_cw]`.
pub fn write_weighting<T: Real>(
    tape: &mut Tape<T>,
    write_gate: Var,
    alloc_gate: Var,
    alloc: Var,
    content: Var,
) -> Result<Var> {
    let by_alloc = tape.mul_scalar(alloc, alloc_gate)?;
    let content_share = tape.one_minus(alloc_gate);
    let by_content = tape.mul_scalar(content, content_share)?;
    let mix = tape.add(by_alloc, by_content)?;
    tape.mul_scalar(mix, write_gate)
}

/// Link matrix and precedence after a write with weighting `write`.
/// Returns `(link, precedence)`.
pub fn update_link<T: Real>(tape: &mut Tape<T>, link_prev: Var, prec_prev: Var, write: Var) -> Result<(Var, Var)> {
    let link = tape.link_update(link_prev, prec_prev, write)?;
    let total = tape.sum(write);
    let keep = tape.one_minus(total);
    let carried = tape.mul_scalar(prec_prev, keep)?;
    let prec = tape.add(carried, write)?;
    Ok((link, prec))
}

/// `w_r = π[0] Lᵀ w_prev + π[1] w_content + π[2] L w_prev`
/// (backward, content, forward).
pub fn read_weighting<T: Real>(tape: &mut Tape<T>, link: Var, read_prev: Var, content: Var, modes: Var) -> Result<Var> {
    let backward = tape.mat_t_vec(link, read_prev)?;
    let forward = tape.matvec(link, read_prev)?;
    let pi = tape.split(modes, &[1, 1, 1])?;
    let b = tape.mul_scalar(backward, pi[0])?;
    let c = tape.mul_scalar(content, pi[1])?;
    let f = tape.mul_scalar(forward, pi[2])?;
    let bc = tape.add(b, c)?;
    tape.add(bc, f)
}

/// `r_k = Σ_i w_r_k[i] M(i)` for every head.
pub fn read_memory<T: Real>(tape: &mut Tape<T>, mem: Var, read_weights: &[Var]) -> Result<Vec<Var>> {
    read_weights.iter().map(|w| tape.mat_t_vec(mem, *w)).collect()
}

/// Encode: `M = M_prev ∘ (E - w eᵀ) + w vᵀ`. Decode: `M = M_prev`, the same
/// node, so the contents are bit-identical.
pub fn update_memory<T: Real>(
    tape: &mut Tape<T>,
    mem_prev: Var,
    write: Var,
    erase: Var,
    add: Var,
    phase: Phase,
) -> Result<Var> {
    match phase {
        Phase::Encode => tape.erase_write(mem_prev, write, erase, add),
        Phase::Decode => Ok(mem_prev),
    }
}

/// Output of one memory step.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub state: MemoryVars,
    pub reads: Vec<Var>,
}

/// One full memory step.
///
/// Encode order: usage, allocation, content write weighting, write weighting,
/// memory write, link and precedence, content read weightings, read
/// weightings, reads. A decode step under [`DecodeFreeze::All`] carries the
/// contents, usage, precedence and links over unchanged, uses a zero write
/// weighting and runs only the read path.
pub fn memory_step<T: Real>(
    tape: &mut Tape<T>,
    state: &MemoryVars,
    iface: &InterfaceVars,
    phase: Phase,
    freeze: DecodeFreeze,
) -> Result<StepOutput> {
    let n = tape.shape(state.usage)[0];
    let (mem, usage, link, precedence, write) = match (phase, freeze) {
        (Phase::Decode, DecodeFreeze::All) => {
            let write = tape.zeros(vec![n]);
            (state.mem, state.usage, state.link, state.precedence, write)
        }
        _ => {
            let usage = update_usage(
                tape,
                state.usage,
                state.write_weights,
                &state.read_weights,
                &iface.free_gates,
            )?;
            let alloc = allocation_weighting(tape, usage)?;
            let content = content_weighting(tape, state.mem, iface.write_key, iface.write_strength)?;
            let write = write_weighting(tape, iface.write_gate, iface.alloc_gate, alloc, content)?;
            let mem = update_memory(tape, state.mem, write, iface.erase, iface.write_vector, phase)?;
            let (link, precedence) = update_link(tape, state.link, state.precedence, write)?;
            (mem, usage, link, precedence, write)
        }
    };

    let mut read_weights = Vec::with_capacity(state.read_weights.len());
    for (k, prev) in state.read_weights.iter().enumerate() {
        let content = content_weighting(tape, mem, iface.read_keys[k], iface.read_strengths[k])?;
        read_weights.push(read_weighting(tape, link, *prev, content, iface.read_modes[k])?);
    }
    let reads = read_memory(tape, mem, &read_weights)?;
    Ok(StepOutput {
        state: MemoryVars {
            mem,
            usage,
            precedence,
            link,
            write_weights: write,
            read_weights,
        },
        reads,
    })
}
