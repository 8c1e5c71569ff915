//! Dense tensors and a small reverse-mode differentiation tape.

pub mod kernels;
pub mod tape;
pub mod tensor;

pub use tape::{Gradients, OpCount, Tape, Var};
pub use tensor::{Real, Tensor};

use crate::error::Result;

impl<F: Real> Tape<F> {
    /// Single-head, single-group `softmax(q kᵀ / √d) v`.
    pub fn scaled_dot_attention(&mut self, q: Var, k: Var, v: Var) -> Result<Var> {
        self.attention(q, k, v, 1, 1)
    }
}

/// Largest relative deviation between two gradient vectors.
///
/// The denominator is floored at `floor` so that entries whose true gradient
/// is numerically zero are compared in absolute terms.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}
