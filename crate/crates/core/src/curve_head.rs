//! One-shot degree-4 Bézier decoding.
//!
//! The head regresses four 2-D offsets per vehicle. Together with the anchor
//! `P0` (the last observed position) they form the control points
//! `P_k = P0 + ΔP_k`, and the future is read off the curve at
//! `u_s = s / T_out` for `s = 1..=T_out`:
//!
//! ```text
//! ĉ(u) = Σ_k C(4,k) (1-u)^(4-k) u^k P_k,   C(4,·) = (1, 4, 6, 4, 1)
//! ```
//!
//! The curve is linear in the control points, so its Jacobian is the
//! `T_out × 5` Bernstein matrix, built once per horizon and cached.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{Error, Result};
use crate::numerics::{Real, Tape, Tensor, Var};

/// Number of learned reals per vehicle: four 2-D offsets.
pub const HEAD_OUTPUTS: usize = 8;

pub const BINOMIAL: [f64; 5] = [1.0, 4.0, 6.0, 4.0, 1.0];

/// Bernstein weights `B_{4,k}(u_s)` for `s = 1..=T_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct BernsteinBasis {
    horizon: usize,
    weights: Vec<[f64; 5]>,
}

impl BernsteinBasis {
    pub fn new(horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::Contract("Bézier horizon must be at least 1".into()));
        }
        let weights = (1..=horizon)
            .map(|s| bernstein4(s as f64 / horizon as f64))
            .collect();
        Ok(Self { horizon, weights })
    }

    /// Shared basis for `horizon`, built on first use.
    pub fn cached(horizon: usize) -> Result<Arc<Self>> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<BernsteinBasis>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut map = cache.lock().expect("basis cache poisoned");
        if let Some(b) = map.get(&horizon) {
            return Ok(Arc::clone(b));
        }
        let basis = Arc::new(Self::new(horizon)?);
        map.insert(horizon, Arc::clone(&basis));
        Ok(basis)
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Row `s - 1` holds the five weights at `u_s`.
    pub fn weights(&self) -> &[[f64; 5]] {
        &self.weights
    }

    pub fn flops(&self) -> u64 {
        (self.horizon * 5 * 2 * 2) as u64
    }

    /// Writes `T_out` interleaved `(x, y)` samples into `out`.
    pub fn evaluate_into<F: Real>(&self, ctrl: &[[F; 2]; 5], out: &mut [F]) {
        debug_assert_eq!(out.len(), 2 * self.horizon);
        for (w, o) in self.weights.iter().zip(out.chunks_exact_mut(2)) {
            let mut x = F::zero();
            let mut y = F::zero();
            for k in 0..5 {
                let b = F::of(w[k]);
                x = x + b * ctrl[k][0];
                y = y + b * ctrl[k][1];
            }
            o[0] = x;
            o[1] = y;
        }
    }

    /// `dL/dP_k = Σ_s B_{4,k}(u_s) · upstream_s` for interleaved `upstream`.
    pub fn gradient<F: Real>(&self, upstream: &[F]) -> [[F; 2]; 5] {
        let mut g = [[F::zero(); 2]; 5];
        for (w, up) in self.weights.iter().zip(upstream.chunks_exact(2)) {
            for k in 0..5 {
                let b = F::of(w[k]);
                g[k][0] = g[k][0] + b * up[0];
                g[k][1] = g[k][1] + b * up[1];
            }
        }
        g
    }
}

/// The five degree-4 Bernstein weights at `u`.
pub fn bernstein4(u: f64) -> [f64; 5] {
    let v = 1.0 - u;
    let (u2, v2) = (u * u, v * v);
    [
        BINOMIAL[0] * v2 * v2,
        BINOMIAL[1] * u * v2 * v,
        BINOMIAL[2] * u2 * v2,
        BINOMIAL[3] * u2 * u * v,
        BINOMIAL[4] * u2 * u2,
    ]
}

/// `P_0 = anchor`, `P_k = anchor + ΔP_k`.
pub fn control_points<F: Real>(anchor: &[F], offsets: &[F]) -> [[F; 2]; 5] {
    let mut ctrl = [[anchor[0], anchor[1]]; 5];
    for k in 1..5 {
        ctrl[k][0] = anchor[0] + offsets[2 * (k - 1)];
        ctrl[k][1] = anchor[1] + offsets[2 * (k - 1) + 1];
    }
    ctrl
}

/// Samples the curve at `u_s = s / T_out`, `s = 1..=T_out`.
pub fn evaluate_bezier(ctrl: &[[f64; 2]; 5], horizon: usize) -> Result<Vec<[f64; 2]>> {
    let basis = BernsteinBasis::cached(horizon)?;
    let mut flat = vec![0.0; 2 * horizon];
    basis.evaluate_into(ctrl, &mut flat);
    Ok(flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect())
}

/// Backward of [`evaluate_bezier`].
pub fn bezier_gradient(ctrl: &[[f64; 2]; 5], upstream: &[[f64; 2]]) -> Result<[[f64; 2]; 5]> {
    let _ = ctrl; // the map is linear: the Jacobian does not depend on ctrl
    let basis = BernsteinBasis::cached(upstream.len())?;
    let flat: Vec<f64> = upstream.iter().flat_map(|p| [p[0], p[1]]).collect();
    Ok(basis.gradient(&flat))
}

/// A decoded trajectory for one vehicle.
#[derive(Debug, Clone, PartialEq)]
pub struct BezierPrediction {
    pub anchor: [f64; 2],
    pub offsets: [[f64; 2]; 4],
    pub control_points: [[f64; 2]; 5],
    pub samples: Vec<[f64; 2]>,
}

impl BezierPrediction {
    pub fn from_offsets(anchor: [f64; 2], offsets: &[f64], horizon: usize) -> Result<Self> {
        if offsets.len() != HEAD_OUTPUTS {
            return Err(Error::dim("BezierPrediction", &[offsets.len()], &[HEAD_OUTPUTS]));
        }
        let control_points = control_points(&anchor, offsets);
        let samples = evaluate_bezier(&control_points, horizon)?;
        let mut off = [[0.0; 2]; 4];
        for (k, o) in off.iter_mut().enumerate() {
            *o = [offsets[2 * k], offsets[2 * k + 1]];
        }
        Ok(Self {
            anchor,
            offsets: off,
            control_points,
            samples,
        })
    }
}

/// Linear head `M → 8` offsets. Returns the `N × 8` offset node.
pub fn head_forward<F: Real>(tape: &mut Tape<F>, latent: Var, w: Var, b: Var) -> Result<Var> {
    tape.linear(latent, w, Some(b))
}

/// `N × 5 × 2` control points from `N × 8` offsets and `N × 2` anchors.
pub fn control_point_tensor<F: Real>(anchors: &Tensor<F>, offsets: &Tensor<F>) -> Result<Tensor<F>> {
    let n = anchors.rows();
    if offsets.rows() != n || offsets.cols() != HEAD_OUTPUTS || anchors.cols() != 2 {
        return Err(Error::dim("control_point_tensor", offsets.shape(), anchors.shape()));
    }
    let mut data = Vec::with_capacity(n * 10);
    for i in 0..n {
        let ctrl = control_points(anchors.row(i), offsets.row(i));
        data.extend(ctrl.iter().flat_map(|p| [p[0], p[1]]));
    }
    Tensor::new(vec![n, 5, 2], data)
}
