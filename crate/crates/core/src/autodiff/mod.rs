//! Dense tensors with reverse-mode automatic differentiation.
//!
//! Every quantity of the memory network is computed on a [`Tape`]: the tape
//! records each primitive as it executes, and [`Tape::backward`] replays the
//! record in reverse to produce gradients. Trainable state lives outside the
//! tape in a [`ParamStore`] and is bound to a fresh tape once per sequence.
//!
//! The scalar type is generic over [`Real`] (`f32` or `f64`). Gradient checks
//! always run at 64-bit.

mod adam;
mod gradcheck;
mod kernels;
mod tape;
mod tensor;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{central_difference, central_difference4, gradient_check, GradCheckReport, GradEntry};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Bound, ParamId, ParamStore, Tensor};

/// Guard added to norm products and the Adam denominator.
pub const EPS: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("function is not deterministic: repeated evaluation gave {0} then {1}")]
    NonDeterministic(f64, f64),
}

pub type Result<T, E = AutodiffError> = std::result::Result<T, E>;

/// Floating point precision of values and gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

impl Precision {
    pub fn name(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }

    pub fn byte_width(self) -> usize {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }
}

/// Scalar element type of tensors.
pub trait Real:
    Float + Default + Debug + Display + Send + Sync + 'static + Sum + AddAssign + SubAssign + MulAssign + DivAssign
{
    const PRECISION: Precision;

    fn lit(x: f64) -> Self;
    fn as_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    /// `bytes` holds exactly `PRECISION.byte_width()` bytes.
    fn read_le(bytes: &[u8]) -> Self;
}

impl Real for f64 {
    const PRECISION: Precision = Precision::F64;

    #[inline]
    fn lit(x: f64) -> Self {
        x
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        let mut buf = [0u8; 8];
        buf.copy_from_slice(bytes);
        f64::from_le_bytes(buf)
    }
}

impl Real for f32 {
    const PRECISION: Precision = Precision::F32;

    #[inline]
    fn lit(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        let mut buf = [0u8; 4];
        buf.copy_from_slice(bytes);
        f32::from_le_bytes(buf)
    }
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `1 + ln(1 + e^x)`, evaluated without overflow for large `|x|`.
#[inline]
pub fn oneplus<T: Real>(x: T) -> T {
    T::one() + x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// Softmax with max subtraction. Rejects an empty input.
pub fn softmax<T: Real>(x: &[T]) -> Result<Vec<T>> {
    if x.is_empty() {
        return Err(AutodiffError::Invalid {
            op: "softmax",
            msg: "empty input".into(),
        });
    }
    let mut out = vec![T::zero(); x.len()];
    kernels::softmax_into(x, &mut out);
    Ok(out)
}

/// `a·b / (‖a‖‖b‖ + ε)`.
pub fn cosine_similarity<T: Real>(a: &[T], b: &[T]) -> Result<T> {
    if a.len() != b.len() {
        return Err(AutodiffError::Shape {
            op: "cosine_similarity",
            lhs: vec![a.len()],
            rhs: vec![b.len()],
        });
    }
    let dot = kernels::dot(a, b);
    let na = kernels::dot(a, a).sqrt();
    let nb = kernels::dot(b, b).sqrt();
    Ok(dot / (na * nb + T::lit(EPS)))
}
