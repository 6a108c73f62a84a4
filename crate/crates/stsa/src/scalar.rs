//! Scalar abstraction over the two supported element types.
//!
//! Every tensor in the crate is generic over [`Scalar`], which is implemented
//! for `f32` (fast runs) and `f64` (oracle and gradient checks). Gradient code
//! refuses to run in single precision; see `attention::backward`.

use std::fmt::{Debug, Display};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::Float;

/// Element precision of a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    Single,
    Double,
}

impl Precision {
    /// Dtype tag used by the LVT1 binary format.
    pub fn dtype_tag(self) -> u8 {
        match self {
            Precision::Single => 1,
            Precision::Double => 2,
        }
    }

    pub fn from_dtype_tag(tag: u8) -> Option<Self> {
        match tag {
            1 => Some(Precision::Single),
            2 => Some(Precision::Double),
            _ => None,
        }
    }
}

impl Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Precision::Single => write!(f, "single"),
            Precision::Double => write!(f, "double"),
        }
    }
}

/// Floating-point element type usable in every kernel of the crate.
pub trait Scalar:
    Float
    + LinalgScalar
    + ScalarOperand
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    const PRECISION: Precision;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    const PRECISION: Precision = Precision::Single;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const PRECISION: Precision = Precision::Double;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }

    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}
