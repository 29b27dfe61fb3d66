use crate::autodiff::{Real, Result, Tape, Var};

use super::MemoryShape;

/// Value every memory cell starts from. Non-zero so cosine similarity
/// against a fresh row is defined.
pub const INITIAL_CONTENT: f64 = 1e-6;

/// Snapshot of the memory carried between time steps.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryState<T> {
    pub shape: MemoryShape,
    /// `N x D` contents, row-major.
    pub mem: Vec<T>,
    pub usage: Vec<T>,
    pub precedence: Vec<T>,
    /// `N x N` temporal links; `link[i * N + j]` is the degree to which `i`
    /// was written right after `j`.
    pub link: Vec<T>,
    pub write_weights: Vec<T>,
    pub read_weights: Vec<Vec<T>>,
}

/// Tape handles for a [`MemoryState`].
#[derive(Debug, Clone)]
pub struct MemoryVars {
    pub mem: Var,
    pub usage: Var,
    pub precedence: Var,
    pub link: Var,
    pub write_weights: Var,
    pub read_weights: Vec<Var>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvariantViolation(pub String);

impl std::fmt::Display for InvariantViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

const RANGE_TOL: f64 = 1e-12;
const SUM_TOL: f64 = 1e-9;
const LINK_SUM_TOL: f64 = 1e-6;

impl<T: Real> MemoryState<T> {
    pub fn fresh(shape: MemoryShape) -> Self {
        let (n, d, r) = (shape.slots, shape.word, shape.read_heads);
        Self {
            shape,
            mem: vec![T::lit(INITIAL_CONTENT); n * d],
            usage: vec![T::zero(); n],
            precedence: vec![T::zero(); n],
            link: vec![T::zero(); n * n],
            write_weights: vec![T::zero(); n],
            read_weights: vec![vec![T::zero(); n]; r],
        }
    }

    /// Records the snapshot as constants on `tape`.
    pub fn to_tape(&self, tape: &mut Tape<T>) -> Result<MemoryVars> {
        let (n, d) = (self.shape.slots, self.shape.word);
        Ok(MemoryVars {
            mem: tape.constant(vec![n, d], self.mem.clone())?,
            usage: tape.constant(vec![n], self.usage.clone())?,
            precedence: tape.constant(vec![n], self.precedence.clone())?,
            link: tape.constant(vec![n, n], self.link.clone())?,
            write_weights: tape.constant(vec![n], self.write_weights.clone())?,
            read_weights: self
                .read_weights
                .iter()
                .map(|w| tape.constant(vec![n], w.clone()))
                .collect::<Result<_>>()?,
        })
    }

    /// Checks value ranges, simplex bounds and link structure.
    pub fn check_invariants(&self) -> std::result::Result<(), InvariantViolation> {
        let n = self.shape.slots;
        let fail = |msg: String| Err(InvariantViolation(msg));
        let in_unit = |name: &str, xs: &[T]| -> std::result::Result<(), InvariantViolation> {
            for (i, x) in xs.iter().enumerate() {
                let x = x.as_f64();
                if !(x >= -RANGE_TOL && x <= 1.0 + RANGE_TOL) {
                    return Err(InvariantViolation(format!("{name}[{i}] = {x} outside [0, 1]")));
                }
            }
            Ok(())
        };
        let sum_le_one = |name: &str, xs: &[T]| -> std::result::Result<(), InvariantViolation> {
            let s: f64 = xs.iter().map(|x| x.as_f64()).sum();
            if s > 1.0 + SUM_TOL {
                return Err(InvariantViolation(format!("sum({name}) = {s} > 1")));
            }
            Ok(())
        };
        in_unit("usage", &self.usage)?;
        in_unit("precedence", &self.precedence)?;
        in_unit("link", &self.link)?;
        in_unit("write_weights", &self.write_weights)?;
        sum_le_one("write_weights", &self.write_weights)?;
        sum_le_one("precedence", &self.precedence)?;
        for (k, w) in self.read_weights.iter().enumerate() {
            in_unit(&format!("read_weights[{k}]"), w)?;
            sum_le_one(&format!("read_weights[{k}]"), w)?;
        }
        for i in 0..n {
            if self.link[i * n + i] != T::zero() {
                return fail(format!("link diagonal at {i} is {}", self.link[i * n + i]));
            }
            let row: f64 = (0..n).map(|j| self.link[i * n + j].as_f64()).sum();
            let col: f64 = (0..n).map(|j| self.link[j * n + i].as_f64()).sum();
            if row > 1.0 + LINK_SUM_TOL || col > 1.0 + LINK_SUM_TOL {
                return fail(format!("link row/column {i} sums {row}/{col} exceed 1"));
            }
        }
        if self.mem.iter().any(|v| !v.is_finite()) {
            return fail("non-finite memory contents".into());
        }
        Ok(())
    }
}

impl MemoryVars {
    pub fn fresh<T: Real>(tape: &mut Tape<T>, shape: MemoryShape) -> Result<Self> {
        MemoryState::<T>::fresh(shape).to_tape(tape)
    }

    pub fn snapshot<T: Real>(&self, tape: &Tape<T>, shape: MemoryShape) -> MemoryState<T> {
        MemoryState {
            shape,
            mem: tape.value(self.mem).to_vec(),
            usage: tape.value(self.usage).to_vec(),
            precedence: tape.value(self.precedence).to_vec(),
            link: tape.value(self.link).to_vec(),
            write_weights: tape.value(self.write_weights).to_vec(),
            read_weights: self.read_weights.iter().map(|w| tape.value(*w).to_vec()).collect(),
        }
    }
}
