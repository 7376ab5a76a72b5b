//! Dense numeric kernels with analytic gradients.
//!
//! Everything is generic over [`Real`] so the same code runs in 64-bit
//! (verification), 32-bit (default) and 32-bit-with-16-bit-storage modes.

mod adamw;
mod exact;
mod fd;
mod kernels;
mod matrix;
mod mlp;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adamw::{adamw_step, AdamWConfig, AdamWState};
pub use exact::{exact_sum, ExactAccumulator};
pub use fd::{finite_diff_check, BlockError, FdReport};
pub use kernels::{distmult_message, segment_sum, segment_sum_into, SegmentSums};
pub use matrix::Matrix;
pub use mlp::{mlp_backward, mlp_forward, Linear, Mlp, MlpCache};
pub(crate) use mlp::{mlp_backward_into, mlp_forward_mode};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ShapeError {
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    Mismatch {
        op: &'static str,
        expected: String,
        got: String,
    },
    #[error("index {index} out of range for {len} segments")]
    IndexOutOfRange { index: u32, len: usize },
}

impl ShapeError {
    pub(crate) fn mismatch(op: &'static str, expected: impl Display, got: impl Display) -> Self {
        ShapeError::Mismatch {
            op,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}

/// Scalar type usable by the kernels.
pub trait Real:
    Float + Default + Debug + Display + Send + Sync + 'static + AddAssign + SubAssign + MulAssign + Sum
{
    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;

    /// Rounds through bfloat16, the representation used by 16-bit storage.
    fn round_half(self) -> Self {
        Self::from_f64(half::bf16::from_f64(self.as_f64()).to_f64())
    }
}

impl Real for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn round_half(self) -> Self {
        half::bf16::from_f32(self).to_f32()
    }
}

impl Real for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// How per-destination sums are reduced.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// Plain floating-point accumulation in edge order.
    #[default]
    Fast,
    /// Exactly rounded sums: the result is independent of summation order and
    /// of how the terms are grouped, so it is bitwise reproducible across
    /// edge permutations and across partitioned execution.
    Exact,
}

/// Storage format for activations and parameters during a forward pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Storage {
    #[default]
    Full,
    /// Stored values rounded to bfloat16; all accumulation stays in the
    /// working precision.
    Half,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NumericMode {
    pub reduction: Reduction,
    pub storage: Storage,
}

impl NumericMode {
    pub const FAST: NumericMode = NumericMode {
        reduction: Reduction::Fast,
        storage: Storage::Full,
    };
    pub const DETERMINISTIC: NumericMode = NumericMode {
        reduction: Reduction::Exact,
        storage: Storage::Full,
    };
    pub const HALF_STORAGE: NumericMode = NumericMode {
        reduction: Reduction::Fast,
        storage: Storage::Half,
    };

    pub(crate) fn store<T: Real>(&self, m: &mut Matrix<T>) {
        if self.storage == Storage::Half {
            m.map_inplace(Real::round_half);
        }
    }
}

/// Named parameter blocks, visited in a fixed order.
///
/// Optimizers, checkpoints and gradient checks all walk parameters through
/// this trait, so a gradient value of the same type lines up block by block.
pub trait ParamBlocks<T> {
    fn block_names(&self) -> Vec<String>;
    fn blocks(&self) -> Vec<&[T]>;
    fn blocks_mut(&mut self) -> Vec<&mut [T]>;

    fn n_params(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }
}

impl<T> ParamBlocks<T> for Vec<T> {
    fn block_names(&self) -> Vec<String> {
        vec!["values".to_string()]
    }
    fn blocks(&self) -> Vec<&[T]> {
        vec![self.as_slice()]
    }
    fn blocks_mut(&mut self) -> Vec<&mut [T]> {
        vec![self.as_mut_slice()]
    }
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Numerically stable `ln(1 + e^x)`.
#[inline]
pub fn softplus<T: Real>(x: T) -> T {
    if x > T::from_f64(30.0) {
        x
    } else if x < T::from_f64(-30.0) {
        x.exp()
    } else {
        x.max(T::zero()) + (-(x.abs())).exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!((sigmoid(1.0f64) - 0.731_058_578_630_004_9).abs() < 1e-15);
        assert!((sigmoid(-1.0f64) + sigmoid(1.0f64) - 1.0).abs() < 1e-15);
        assert!(sigmoid(-800.0f64) >= 0.0);
    }

    #[test]
    fn softplus_values() {
        assert!((softplus(0.0f64) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(softplus(-100.0f64) < 1e-40);
        assert_eq!(softplus(100.0f64), 100.0);
    }

    #[test]
    fn bf16_rounding() {
        assert_eq!(1.0f32.round_half(), 1.0);
        let x = 1.0f32 + 1.0 / 1024.0;
        assert_eq!(x.round_half(), 1.0);
        assert_eq!((3.0f64).round_half(), 3.0);
    }
}
