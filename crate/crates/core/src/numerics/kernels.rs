//! Slice-level kernels shared by the tape's forward and backward passes.
//!
//! All matrices are row-major. Functions named `*_acc` add into `out`.

use super::tensor::Real;

/// `out = a · b` with `a: m×k`, `b: k×n`.
pub fn matmul<F: Real>(a: &[F], b: &[F], out: &mut [F], m: usize, k: usize, n: usize) {
    out.iter_mut().for_each(|v| *v = F::zero());
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == F::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o = *o + aip * bv;
            }
        }
    }
}

/// `out += aᵀ · b` with `a: m×k`, `b: m×n`, `out: k×n`.
pub fn matmul_at_b_acc<F: Real>(a: &[F], b: &[F], out: &mut [F], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let b_row = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == F::zero() {
                continue;
            }
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o = *o + aip * bv;
            }
        }
    }
}

/// `out += a · bᵀ` with `a: m×n`, `b: k×n`, `out: m×k`.
pub fn matmul_a_bt_acc<F: Real>(a: &[F], b: &[F], out: &mut [F], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let a_row = &a[i * n..(i + 1) * n];
        for j in 0..k {
            let b_row = &b[j * n..(j + 1) * n];
            out[i * k + j] = out[i * k + j] + dot(a_row, b_row);
        }
    }
}

/// Dot product with eight independent partial sums.
#[inline]
pub fn dot<F: Real>(x: &[F], y: &[F]) -> F {
    let mut lanes = [F::zero(); 8];
    let (xc, yc) = (x.chunks_exact(8), y.chunks_exact(8));
    let (xr, yr) = (xc.remainder(), yc.remainder());
    for (a, b) in xc.zip(yc) {
        for l in 0..8 {
            lanes[l] = lanes[l] + a[l] * b[l];
        }
    }
    let mut tail = F::zero();
    for (&a, &b) in xr.iter().zip(yr) {
        tail = tail + a * b;
    }
    let pairs = [lanes[0] + lanes[4], lanes[1] + lanes[5], lanes[2] + lanes[6], lanes[3] + lanes[7]];
    (pairs[0] + pairs[2]) + (pairs[1] + pairs[3]) + tail
}

#[inline]
pub fn leaky_relu<F: Real>(x: F, slope: F) -> F {
    if x > F::zero() {
        x
    } else {
        slope * x
    }
}

#[inline]
pub fn leaky_relu_grad<F: Real>(x: F, slope: F) -> F {
    if x > F::zero() {
        F::one()
    } else {
        slope
    }
}

/// In-place numerically stable softmax.
pub fn softmax<F: Real>(row: &mut [F]) {
    let max = row.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
    let mut sum = F::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

/// Row-wise layer normalization. Fills `xhat` and `inv_std` for backward.
#[allow(clippy::too_many_arguments)]
pub fn layer_norm<F: Real>(
    x: &[F],
    gamma: &[F],
    beta: &[F],
    eps: F,
    cols: usize,
    out: &mut [F],
    xhat: &mut [F],
    inv_std: &mut [F],
) {
    let n = F::of(cols as f64);
    for (r, row) in x.chunks_exact(cols).enumerate() {
        let mean = row.iter().fold(F::zero(), |a, &v| a + v) / n;
        let var = row
            .iter()
            .fold(F::zero(), |a, &v| a + (v - mean) * (v - mean))
            / n;
        let inv = F::one() / (var + eps).sqrt();
        inv_std[r] = inv;
        for c in 0..cols {
            let h = (row[c] - mean) * inv;
            xhat[r * cols + c] = h;
            out[r * cols + c] = h * gamma[c] + beta[c];
        }
    }
}

/// Shape bookkeeping for grouped multi-head attention.
///
/// Queries and keys are stacked group-major: group `g` owns query rows
/// `g*lq..(g+1)*lq` and key/value rows `g*lk..(g+1)*lk`. Heads split the
/// model dimension into contiguous column blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttnShape {
    pub groups: usize,
    pub lq: usize,
    pub lk: usize,
    pub dim: usize,
    pub heads: usize,
}

impl AttnShape {
    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn probs_len(&self) -> usize {
        self.groups * self.heads * self.lq * self.lk
    }

    pub fn flops(&self) -> u64 {
        // scores + weighted sum, each lq·lk·dim multiply-adds per group
        (self.groups * self.lq * self.lk * self.dim * 4) as u64
    }
}

/// `out = softmax(q kᵀ / √d_head) v` per group and head; stores the
/// attention probabilities in `probs` (layout: group, head, query, key).
pub fn attention<F: Real>(q: &[F], k: &[F], v: &[F], s: AttnShape, out: &mut [F], probs: &mut [F]) {
    let dh = s.head_dim();
    let scale = F::one() / F::of(dh as f64).sqrt();
    out.iter_mut().for_each(|o| *o = F::zero());
    for g in 0..s.groups {
        for h in 0..s.heads {
            let c0 = h * dh;
            for i in 0..s.lq {
                let qrow = &q[(g * s.lq + i) * s.dim + c0..][..dh];
                let p_off = ((g * s.heads + h) * s.lq + i) * s.lk;
                let prow = &mut probs[p_off..p_off + s.lk];
                for (j, p) in prow.iter_mut().enumerate() {
                    let krow = &k[(g * s.lk + j) * s.dim + c0..][..dh];
                    *p = dot(qrow, krow) * scale;
                }
                softmax(prow);
                let orow = &mut out[(g * s.lq + i) * s.dim + c0..][..dh];
                for (j, &p) in prow.iter().enumerate() {
                    let vrow = &v[(g * s.lk + j) * s.dim + c0..][..dh];
                    for (o, &vv) in orow.iter_mut().zip(vrow) {
                        *o = *o + p * vv;
                    }
                }
            }
        }
    }
}

/// Backward of [`attention`]; accumulates into `dq`, `dk`, `dv`.
#[allow(clippy::too_many_arguments)]
pub fn attention_backward<F: Real>(
    q: &[F],
    k: &[F],
    v: &[F],
    probs: &[F],
    dout: &[F],
    s: AttnShape,
    dq: &mut [F],
    dk: &mut [F],
    dv: &mut [F],
) {
    let dh = s.head_dim();
    let scale = F::one() / F::of(dh as f64).sqrt();
    let mut dp = vec![F::zero(); s.lk];
    for g in 0..s.groups {
        for h in 0..s.heads {
            let c0 = h * dh;
            for i in 0..s.lq {
                let qi = (g * s.lq + i) * s.dim + c0;
                let p_off = ((g * s.heads + h) * s.lq + i) * s.lk;
                let prow = &probs[p_off..p_off + s.lk];
                let do_row = &dout[qi..qi + dh];
                // dV += pᵀ dO ; dP = dO Vᵀ
                for j in 0..s.lk {
                    let vj = (g * s.lk + j) * s.dim + c0;
                    let mut acc = F::zero();
                    for c in 0..dh {
                        dv[vj + c] = dv[vj + c] + prow[j] * do_row[c];
                        acc = acc + do_row[c] * v[vj + c];
                    }
                    dp[j] = acc;
                }
                let inner = prow
                    .iter()
                    .zip(&dp)
                    .fold(F::zero(), |a, (&p, &d)| a + p * d);
                for j in 0..s.lk {
                    let ds = prow[j] * (dp[j] - inner) * scale;
                    if ds == F::zero() {
                        continue;
                    }
                    let kj = (g * s.lk + j) * s.dim + c0;
                    for c in 0..dh {
                        dq[qi + c] = dq[qi + c] + ds * k[kj + c];
                        dk[kj + c] = dk[kj + c] + ds * q[qi + c];
                    }
                }
            }
        }
    }
}
