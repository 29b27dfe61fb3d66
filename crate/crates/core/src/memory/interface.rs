use crate::autodiff::{AutodiffError, Real, Result, Tape, Var};

use super::MemoryShape;

/// Activated controller emissions on the tape.
#[derive(Debug, Clone)]
pub struct InterfaceVars {
    pub read_keys: Vec<Var>,
    pub read_strengths: Vec<Var>,
    pub write_key: Var,
    pub write_strength: Var,
    pub erase: Var,
    pub write_vector: Var,
    pub free_gates: Vec<Var>,
    pub alloc_gate: Var,
    pub write_gate: Var,
    /// Per head `[backward, content, forward]`.
    pub read_modes: Vec<Var>,
}

/// Plain-value copy of [`InterfaceVars`].
#[derive(Debug, Clone, PartialEq)]
pub struct InterfaceVector<T> {
    pub read_keys: Vec<Vec<T>>,
    pub read_strengths: Vec<T>,
    pub write_key: Vec<T>,
    pub write_strength: T,
    pub erase: Vec<T>,
    pub write_vector: Vec<T>,
    pub free_gates: Vec<T>,
    pub alloc_gate: T,
    pub write_gate: T,
    pub read_modes: Vec<[T; 3]>,
}

/// Splits a raw emission of length `(R + 3) D + 5 R + 3` in the order
/// `[read keys, read strengths, write key, write strength, erase, write
/// vector, free gates, allocation gate, write gate, read modes]` and applies
/// oneplus to strengths, sigmoid to erase and gates, and a softmax per
/// read-mode triple. Keys and the write vector stay raw.
pub fn parse_interface<T: Real>(tape: &mut Tape<T>, raw: Var, shape: MemoryShape) -> Result<InterfaceVars> {
    let expected = shape.interface_len();
    let got = tape.shape(raw);
    if got != [expected] {
        return Err(AutodiffError::Invalid {
            op: "parse_interface",
            msg: format!("expected length {expected}, got shape {got:?}"),
        });
    }
    let (r, d) = (shape.read_heads, shape.word);
    let mut lens = Vec::with_capacity(4 * r + 7);
    lens.extend(std::iter::repeat(d).take(r));
    lens.extend(std::iter::repeat(1).take(r));
    lens.extend([d, 1, d, d]);
    lens.extend(std::iter::repeat(1).take(r));
    lens.extend([1, 1]);
    lens.extend(std::iter::repeat(3).take(r));
    let parts = tape.split(raw, &lens)?;
    let mut it = parts.into_iter();
    let mut take = |n: usize| it.by_ref().take(n).collect::<Vec<_>>();

    let read_keys = take(r);
    let read_strengths = take(r).into_iter().map(|v| tape.oneplus(v)).collect();
    let [write_key, write_strength, erase, write_vector] = take(4)[..] else {
        unreachable!()
    };
    let write_strength = tape.oneplus(write_strength);
    let erase = tape.sigmoid(erase);
    let free_gates = take(r).into_iter().map(|v| tape.sigmoid(v)).collect();
    let [alloc_gate, write_gate] = take(2)[..] else {
        unreachable!()
    };
    let alloc_gate = tape.sigmoid(alloc_gate);
    let write_gate = tape.sigmoid(write_gate);
    let read_modes = take(r)
        .into_iter()
        .map(|v| tape.softmax(v))
        .collect::<Result<Vec<_>>>()?;
    Ok(InterfaceVars {
        read_keys,
        read_strengths,
        write_key,
        write_strength,
        erase,
        write_vector,
        free_gates,
        alloc_gate,
        write_gate,
        read_modes,
    })
}

impl InterfaceVars {
    pub fn values<T: Real>(&self, tape: &Tape<T>) -> InterfaceVector<T> {
        let vec = |v: Var| tape.value(v).to_vec();
        InterfaceVector {
            read_keys: self.read_keys.iter().map(|v| vec(*v)).collect(),
            read_strengths: self.read_strengths.iter().map(|v| tape.scalar(*v)).collect(),
            write_key: vec(self.write_key),
            write_strength: tape.scalar(self.write_strength),
            erase: vec(self.erase),
            write_vector: vec(self.write_vector),
            free_gates: self.free_gates.iter().map(|v| tape.scalar(*v)).collect(),
            alloc_gate: tape.scalar(self.alloc_gate),
            write_gate: tape.scalar(self.write_gate),
            read_modes: self
                .read_modes
                .iter()
                .map(|v| {
                    let p = tape.value(*v);
                    [p[0], p[1], p[2]]
                })
                .collect(),
        }
    }
}

/// Parses raw values without recording gradients.
pub fn parse_interface_values<T: Real>(raw: &[T], shape: MemoryShape) -> Result<InterfaceVector<T>> {
    let mut tape = Tape::new();
    let v = tape.vector(raw.to_vec());
    let iface = parse_interface(&mut tape, v, shape)?;
    Ok(iface.values(&tape))
}

impl<T: Real> InterfaceVector<T> {
    /// Records the values as tape constants, bypassing activations.
    pub fn to_tape(&self, tape: &mut Tape<T>) -> InterfaceVars {
        let scalar = |tape: &mut Tape<T>, x: T| tape.leaf(vec![1], vec![x], false).expect("scalar");
        InterfaceVars {
            read_keys: self.read_keys.iter().map(|k| tape.vector(k.clone())).collect(),
            read_strengths: self.read_strengths.iter().map(|s| scalar(tape, *s)).collect(),
            write_key: tape.vector(self.write_key.clone()),
            write_strength: scalar(tape, self.write_strength),
            erase: tape.vector(self.erase.clone()),
            write_vector: tape.vector(self.write_vector.clone()),
            free_gates: self.free_gates.iter().map(|f| scalar(tape, *f)).collect(),
            alloc_gate: scalar(tape, self.alloc_gate),
            write_gate: scalar(tape, self.write_gate),
            read_modes: self.read_modes.iter().map(|p| tape.vector(p.to_vec())).collect(),
        }
    }
}
