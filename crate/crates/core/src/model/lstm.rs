use super::{ModelError, Result};
use crate::autodiff::{Real, Tape, Var};

/// Hidden state and cell memory of a controller, on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ControllerState {
    pub h: Var,
    pub c: Var,
}

impl ControllerState {
    pub fn zeros<T: Real>(tape: &mut Tape<T>, hidden: usize) -> Self {
        Self {
            h: tape.zeros(vec![hidden]),
            c: tape.zeros(vec![hidden]),
        }
    }
}

/// Gate weights `[4H, in + H]` and bias `[4H]`, gate order input, forget,
/// output, candidate.
#[derive(Debug, Clone, Copy)]
pub struct LstmWeights {
    pub weight: Var,
    pub bias: Var,
}

/// One LSTM step on input `x`.
pub fn lstm_cell<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    state: ControllerState,
    w: LstmWeights,
) -> Result<ControllerState> {
    let hidden = tape.shape(state.h)[0];
    let ws = tape.shape(w.weight);
    let in_len = tape.shape(x).first().copied().unwrap_or(0);
    if ws != [4 * hidden, in_len + hidden] {
        return Err(ModelError::LengthMismatch {
            what: "lstm input",
            expected: ws.get(1).copied().unwrap_or(0).saturating_sub(hidden),
            got: in_len,
        });
    }
    let xh = tape.concat(&[x, state.h])?;
    let gates = tape.affine(w.weight, xh, w.bias)?;
    let parts = tape.split(gates, &[hidden; 4])?;
    let i = tape.sigmoid(parts[0]);
    let f = tape.sigmoid(parts[1]);
    let o = tape.sigmoid(parts[2]);
    let g = tape.tanh(parts[3]);
    let keep = tape.mul(f, state.c)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(keep, write)?;
    let squashed = tape.tanh(c);
    let h = tape.mul(o, squashed)?;
    Ok(ControllerState { h, c })
}
