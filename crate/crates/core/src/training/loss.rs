//! Masked ℓ2 trajectory loss.
//!
//! `L = 1/(N·T_out) · Σ_i Σ_k m_ik ‖ĉ_ik − c_ik‖²`. The denominator counts every
//! prediction slot, masked or not.

use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

fn check<F: Real>(pred: &Tensor<F>, target: &Tensor<F>, mask: &Tensor<F>) -> Result<(usize, usize)> {
    let n = mask.rows();
    let t = mask.cols();
    if pred.len() != n * t * 2 || pred.rows() != n {
        return Err(Error::dim("masked_l2_loss", pred.shape(), mask.shape()));
    }
    if target.len() != pred.len() {
        return Err(Error::dim("masked_l2_loss", pred.shape(), target.shape()));
    }
    Ok((n, t))
}

pub fn masked_l2_value<F: Real>(pred: &Tensor<F>, target: &Tensor<F>, mask: &Tensor<F>) -> Result<F> {
    let (n, t) = check(pred, target, mask)?;
    if n * t == 0 {
        return Ok(F::zero());
    }
    let mut acc = F::zero();
    for ((p, q), &m) in pred
        .data()
        .chunks_exact(2)
        .zip(target.data().chunks_exact(2))
        .zip(mask.data())
    {
        if m != F::zero() {
            let dx = p[0] - q[0];
            let dy = p[1] - q[1];
            acc = acc + m * (dx * dx + dy * dy);
        }
    }
    Ok(acc / F::of((n * t) as f64))
}

/// Adds `scale · dL/dpred` into `out`.
pub fn masked_l2_grad_acc<F: Real>(pred: &Tensor<F>, target: &Tensor<F>, mask: &Tensor<F>, scale: F, out: &mut [F]) {
    let slots = mask.len();
    if slots == 0 {
        return;
    }
    let k = scale * F::of(2.0 / slots as f64);
    for (((o, p), q), &m) in out
        .chunks_exact_mut(2)
        .zip(pred.data().chunks_exact(2))
        .zip(target.data().chunks_exact(2))
        .zip(mask.data())
    {
        if m != F::zero() {
            o[0] = o[0] + k * m * (p[0] - q[0]);
            o[1] = o[1] + k * m * (p[1] - q[1]);
        }
    }
}

/// `pred` and `target` are `N × T_out × 2` (any leading-`N` layout), `mask` is `N × T_out`.
pub fn masked_l2_loss(pred: &Tensor, target: &Tensor, mask: &Tensor) -> Result<f64> {
    masked_l2_value(pred, target, mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_prediction_is_zero() {
        let p = Tensor::new(vec![2, 3, 2], (0..12).map(f64::from).collect()).unwrap();
        let m = Tensor::filled(vec![2, 3], 1.0);
        assert_eq!(masked_l2_loss(&p, &p, &m).unwrap(), 0.0);
    }

    #[test]
    fn fully_masked_is_zero() {
        let p = Tensor::filled(vec![1, 4, 2], 3.0);
        let t = Tensor::zeros(vec![1, 4, 2]);
        let m = Tensor::zeros(vec![1, 4]);
        assert_eq!(masked_l2_loss(&p, &t, &m).unwrap(), 0.0);
    }

    #[test]
    fn single_unit_error_over_25_slots() {
        let t = Tensor::zeros(vec![1, 25, 2]);
        let mut p = t.clone();
        p.data_mut()[2 * 7] = 1.0;
        let m = Tensor::filled(vec![1, 25], 1.0);
        assert_eq!(masked_l2_loss(&p, &t, &m).unwrap(), 0.04);
    }

    #[test]
    fn shape_mismatch_is_error() {
        let p = Tensor::zeros(vec![1, 4, 2]);
        let t = Tensor::zeros(vec![1, 5, 2]);
        let m = Tensor::zeros(vec![1, 4]);
        assert!(masked_l2_loss(&p, &t, &m).is_err());
    }
}
