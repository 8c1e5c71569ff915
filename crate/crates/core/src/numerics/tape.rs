//! Reverse-mode differentiation over a linear tape.
//!
//! Every operation appends a node holding its forward value and whatever it
//! needs for the backward pass. Inputs always precede outputs, so reverse
//! tape order is a valid reverse topological order.

use std::sync::Arc;

use rand::Rng;

use super::kernels::{self, AttnShape};
use super::tensor::{Real, Tensor};
use crate::curve_head::BernsteinBasis;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }

    pub(crate) fn from_index(i: usize) -> Self {
        Self(i)
    }
}

enum Op<F> {
    Leaf { param: bool },
    MatMul(usize, usize),
    AddBias(usize, usize),
    Add(usize, usize),
    AddConst(usize),
    ScaleBy(usize, usize),
    MulConst(usize, F),
    LeakyRelu(usize, F),
    Dropout(usize, Vec<F>),
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<F>,
        inv_std: Vec<F>,
    },
    Attention {
        q: usize,
        k: usize,
        v: usize,
        shape: AttnShape,
        probs: Vec<F>,
    },
    NeighborSum(usize, Arc<Vec<Vec<usize>>>),
    RepeatRows(usize, usize),
    ConcatCols(usize, usize),
    Bezier {
        offsets: usize,
        basis: Arc<BernsteinBasis>,
    },
    MaskedL2 {
        pred: usize,
        target: Tensor<F>,
        mask: Tensor<F>,
    },
    Sum(usize),
}

impl<F> Op<F> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf { .. } => "leaf",
            Op::MatMul(..) => "matmul",
            Op::AddBias(..) => "add_bias",
            Op::Add(..) => "add",
            Op::AddConst(..) => "add_const",
            Op::ScaleBy(..) => "scale_by",
            Op::MulConst(..) => "mul_const",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Dropout(..) => "dropout",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Attention { .. } => "attention",
            Op::NeighborSum(..) => "neighbor_sum",
            Op::RepeatRows(..) => "repeat_rows",
            Op::ConcatCols(..) => "concat_cols",
            Op::Bezier { .. } => "bezier",
            Op::MaskedL2 { .. } => "masked_l2",
            Op::Sum(..) => "sum",
        }
    }
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
}

/// Operation counters, used to show which stages scale with what.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCount {
    pub nodes: usize,
    pub flops: u64,
}

impl std::ops::Sub for OpCount {
    type Output = OpCount;
    fn sub(self, rhs: OpCount) -> OpCount {
        OpCount {
            nodes: self.nodes - rhs.nodes,
            flops: self.flops - rhs.flops,
        }
    }
}

pub struct Tape<F: Real = f64> {
    nodes: Vec<Node<F>>,
    flops: u64,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            flops: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn count(&self) -> OpCount {
        OpCount {
            nodes: self.nodes.len(),
            flops: self.flops,
        }
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, flops: u64) -> Var {
        self.flops += flops;
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Constant input; receives a gradient but is not reported as a parameter.
    pub fn leaf(&mut self, value: Tensor<F>) -> Var {
        self.push(value, Op::Leaf { param: false }, 0)
    }

    /// Learnable leaf. After [`Tape::backward`] its gradient is always present.
    pub fn param(&mut self, value: Tensor<F>) -> Var {
        self.push(value, Op::Leaf { param: true }, 0)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        if k != bv.rows() || av.shape().len() != 2 || bv.shape().len() != 2 {
            return Err(Error::dim("matmul", av.shape(), bv.shape()));
        }
        let mut out = vec![F::zero(); m * n];
        kernels::matmul(av.data(), bv.data(), &mut out, m, k, n);
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push(t, Op::MatMul(a.0, b.0), (2 * m * k * n) as u64))
    }

    /// `x[m×n] + bias[1×n]` broadcast over rows.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let n = xv.cols();
        if bv.len() != n {
            return Err(Error::dim("add_bias", xv.shape(), bv.shape()));
        }
        let mut out = xv.clone();
        for row in out.data_mut().chunks_exact_mut(n.max(1)) {
            for (o, &b) in row.iter_mut().zip(bv.data()) {
                *o = *o + b;
            }
        }
        let flops = out.len() as u64;
        Ok(self.push(out, Op::AddBias(x.0, bias.0), flops))
    }

    /// `x·w + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_bias(y, b),
            None => Ok(y),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::dim("add", av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x + y).collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        let flops = t.len() as u64;
        Ok(self.push(t, Op::Add(a.0, b.0), flops))
    }

    /// Adds a constant tensor of identical shape (no gradient flows into it).
    pub fn add_const(&mut self, x: Var, c: &Tensor<F>) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape() != c.shape() {
            return Err(Error::dim("add_const", xv.shape(), c.shape()));
        }
        let data = xv.data().iter().zip(c.data()).map(|(&x, &y)| x + y).collect();
        let t = Tensor::new(xv.shape().to_vec(), data)?;
        let flops = t.len() as u64;
        Ok(self.push(t, Op::AddConst(x.0), flops))
    }

    /// Multiplies `x` by a learnable one-element tensor `s`.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        let sv = self.value(s);
        if sv.len() != 1 {
            return Err(Error::dim("scale_by", self.shape(x), sv.shape()));
        }
        let k = sv.data()[0];
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| v * k).collect();
        let t = Tensor::new(xv.shape().to_vec(), data)?;
        let flops = t.len() as u64;
        Ok(self.push(t, Op::ScaleBy(x.0, s.0), flops))
    }

    pub fn mul_const(&mut self, x: Var, c: F) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| v * c).collect();
        let t = Tensor::new(xv.shape().to_vec(), data).expect("same shape");
        let flops = t.len() as u64;
        self.push(t, Op::MulConst(x.0, c), flops)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: F) -> Var {
        let xv = self.value(x);
        let data = xv
            .data()
            .iter()
            .map(|&v| kernels::leaky_relu(v, slope))
            .collect();
        let t = Tensor::new(xv.shape().to_vec(), data).expect("same shape");
        let flops = t.len() as u64;
        self.push(t, Op::LeakyRelu(x.0, slope), flops)
    }

    /// Inverted dropout. With `p == 0` this is the identity and records nothing.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: &mut R) -> Var {
        if p <= 0.0 {
            return x;
        }
        let keep = F::of(1.0 / (1.0 - p));
        let xv = self.value(x);
        let mask: Vec<F> = (0..xv.len())
            .map(|_| {
                if rng.random::<f64>() < p {
                    F::zero()
                } else {
                    keep
                }
            })
            .collect();
        let data = xv.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let t = Tensor::new(xv.shape().to_vec(), data).expect("same shape");
        let flops = t.len() as u64;
        self.push(t, Op::Dropout(x.0, mask), flops)
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = (xv.rows(), xv.cols());
        let (gv, bv) = (self.value(gamma), self.value(beta));
        if gv.len() != cols || bv.len() != cols {
            return Err(Error::dim("layer_norm", xv.shape(), gv.shape()));
        }
        let mut out = vec![F::zero(); rows * cols];
        let mut xhat = vec![F::zero(); rows * cols];
        let mut inv_std = vec![F::zero(); rows];
        kernels::layer_norm(
            xv.data(),
            gv.data(),
            bv.data(),
            F::of(eps),
            cols,
            &mut out,
            &mut xhat,
            &mut inv_std,
        );
        let t = Tensor::new(xv.shape().to_vec(), out)?;
        let flops = 8 * t.len() as u64;
        Ok(self.push(
            t,
            Op::LayerNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                xhat,
                inv_std,
            },
            flops,
        ))
    }

    /// Grouped multi-head scaled dot-product attention.
    ///
    /// `q` holds `groups·lq` rows, `k` and `v` hold `groups·lk` rows, all of
    /// width `dim`. Each group attends only within itself.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, groups: usize, heads: usize) -> Result<Var> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let dim = qv.cols();
        if dim == 0 || heads == 0 || dim % heads != 0 {
            return Err(Error::dim("attention", qv.shape(), &[heads]));
        }
        if kv.cols() != dim || vv.shape() != kv.shape() {
            return Err(Error::dim("attention", qv.shape(), kv.shape()));
        }
        if groups == 0 || qv.rows() % groups != 0 || kv.rows() % groups != 0 {
            return Err(Error::dim("attention", &[qv.rows(), kv.rows()], &[groups]));
        }
        let shape = AttnShape {
            groups,
            lq: qv.rows() / groups,
            lk: kv.rows() / groups,
            dim,
            heads,
        };
        if shape.lq == 0 || shape.lk == 0 {
            return Err(Error::dim("attention", qv.shape(), kv.shape()));
        }
        let mut out = vec![F::zero(); qv.len()];
        let mut probs = vec![F::zero(); shape.probs_len()];
        kernels::attention(qv.data(), kv.data(), vv.data(), shape, &mut out, &mut probs);
        let t = Tensor::new(qv.shape().to_vec(), out)?;
        Ok(self.push(
            t,
            Op::Attention {
                q: q.0,
                k: k.0,
                v: v.0,
                shape,
                probs,
            },
            shape.flops(),
        ))
    }

    /// `out_i = h_i + Σ_{j ∈ lists[i]} h_j` (sum aggregation with a self term).
    pub fn neighbor_sum(&mut self, h: Var, lists: Arc<Vec<Vec<usize>>>) -> Result<Var> {
        let hv = self.value(h);
        let (n, d) = (hv.rows(), hv.cols());
        if lists.len() != n {
            return Err(Error::Contract(format!(
                "neighbor lists cover {} vehicles, features have {n} rows",
                lists.len()
            )));
        }
        let mut out = hv.data().to_vec();
        let mut flops = 0u64;
        for (i, list) in lists.iter().enumerate() {
            for &j in list {
                if j >= n {
                    return Err(Error::Contract(format!(
                        "edge ({i},{j}) references a vehicle outside 0..{n}"
                    )));
                }
                let src = &hv.data()[j * d..(j + 1) * d];
                for (o, &s) in out[i * d..(i + 1) * d].iter_mut().zip(src) {
                    *o = *o + s;
                }
                flops += d as u64;
            }
        }
        let t = Tensor::new(hv.shape().to_vec(), out)?;
        Ok(self.push(t, Op::NeighborSum(h.0, lists), flops))
    }

    /// Row `i*times + s` of the output is row `i` of `x`.
    pub fn repeat_rows(&mut self, x: Var, times: usize) -> Var {
        let xv = self.value(x);
        let (r, c) = (xv.rows(), xv.cols());
        let mut out = Vec::with_capacity(r * times * c);
        for i in 0..r {
            for _ in 0..times {
                out.extend_from_slice(xv.row(i));
            }
        }
        let t = Tensor::new(vec![r * times, c], out).expect("consistent shape");
        self.push(t, Op::RepeatRows(x.0, times), 0)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != bv.rows() {
            return Err(Error::dim("concat_cols", av.shape(), bv.shape()));
        }
        let (r, ca, cb) = (av.rows(), av.cols(), bv.cols());
        let mut out = Vec::with_capacity(r * (ca + cb));
        for i in 0..r {
            out.extend_from_slice(av.row(i));
            out.extend_from_slice(bv.row(i));
        }
        let t = Tensor::new(vec![r, ca + cb], out)?;
        Ok(self.push(t, Op::ConcatCols(a.0, b.0), 0))
    }

    /// Reconstructs `N × (2·T_out)` curve samples from `N × 8` control-point
    /// offsets anchored at `anchors` (`N × 2`, constant).
    pub fn bezier(&mut self, offsets: Var, anchors: &Tensor<F>, basis: Arc<BernsteinBasis>) -> Result<Var> {
        let ov = self.value(offsets);
        let n = ov.rows();
        if ov.cols() != 8 || anchors.rows() != n || anchors.cols() != 2 {
            return Err(Error::dim("bezier", ov.shape(), anchors.shape()));
        }
        let t_out = basis.horizon();
        let mut out = vec![F::zero(); n * 2 * t_out];
        for i in 0..n {
            let ctrl = crate::curve_head::control_points(anchors.row(i), ov.row(i));
            basis.evaluate_into(&ctrl, &mut out[i * 2 * t_out..(i + 1) * 2 * t_out]);
        }
        let t = Tensor::new(vec![n, 2 * t_out], out)?;
        let flops = basis.flops() * n as u64;
        Ok(self.push(t, Op::Bezier { offsets: offsets.0, basis }, flops))
    }

    /// Masked squared error normalized by `N·T_out` (all slots, masked or not).
    pub fn masked_l2(&mut self, pred: Var, target: Tensor<F>, mask: Tensor<F>) -> Result<Var> {
        let pv = self.value(pred);
        let loss = crate::training::loss::masked_l2_value(pv, &target, &mask)?;
        let flops = 3 * pv.len() as u64;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::MaskedL2 {
                pred: pred.0,
                target,
                mask,
            },
            flops,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let s = xv.data().iter().fold(F::zero(), |a, &v| a + v);
        let flops = xv.len() as u64;
        self.push(Tensor::scalar(s), Op::Sum(x.0), flops)
    }

    /// Reverse-mode accumulation from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(lv.shape().to_vec(), F::one()));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        for (idx, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf { param: true }) && grads[idx].is_none() {
                grads[idx] = Some(Tensor::zeros(node.value.shape().to_vec()));
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &Tensor<F>, grads: &mut [Option<Tensor<F>>]) {
        let node = &self.nodes[idx];
        let gd = g.data();
        match &node.op {
            Op::Leaf { .. } => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                let ga = slot(grads, *a, av);
                kernels::matmul_a_bt_acc(gd, bv.data(), ga.data_mut(), m, n, k);
                let gb = slot(grads, *b, bv);
                kernels::matmul_at_b_acc(av.data(), gd, gb.data_mut(), m, k, n);
            }
            Op::AddBias(x, b) => {
                let xv = &self.nodes[*x].value;
                axpy(slot(grads, *x, xv).data_mut(), gd, F::one());
                let bv = &self.nodes[*b].value;
                let n = bv.len();
                let gb = slot(grads, *b, bv);
                for row in gd.chunks_exact(n.max(1)) {
                    axpy(gb.data_mut(), row, F::one());
                }
            }
            Op::Add(a, b) => {
                for &i in [a, b] {
                    let v = &self.nodes[i].value;
                    axpy(slot(grads, i, v).data_mut(), gd, F::one());
                }
            }
            Op::AddConst(x) => {
                let xv = &self.nodes[*x].value;
                axpy(slot(grads, *x, xv).data_mut(), gd, F::one());
            }
            Op::ScaleBy(x, s) => {
                let xv = &self.nodes[*x].value;
                let sv = &self.nodes[*s].value;
                let k = sv.data()[0];
                axpy(slot(grads, *x, xv).data_mut(), gd, k);
                let dot = xv
                    .data()
                    .iter()
                    .zip(gd)
                    .fold(F::zero(), |a, (&x, &g)| a + x * g);
                let gs = slot(grads, *s, sv);
                gs.data_mut()[0] = gs.data()[0] + dot;
            }
            Op::MulConst(x, c) => {
                let xv = &self.nodes[*x].value;
                axpy(slot(grads, *x, xv).data_mut(), gd, *c);
            }
            Op::LeakyRelu(x, slope) => {
                let xv = &self.nodes[*x].value;
                let gx = slot(grads, *x, xv);
                for ((o, &v), &g) in gx.data_mut().iter_mut().zip(xv.data()).zip(gd) {
                    *o = *o + g * kernels::leaky_relu_grad(v, *slope);
                }
            }
            Op::Dropout(x, mask) => {
                let xv = &self.nodes[*x].value;
                let gx = slot(grads, *x, xv);
                for ((o, &m), &g) in gx.data_mut().iter_mut().zip(mask).zip(gd) {
                    *o = *o + g * m;
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let xv = &self.nodes[*x].value;
                let cols = xv.cols();
                let gv = &self.nodes[*gamma].value;
                let gamma_vals = gv.data().to_vec();
                {
                    let gg = slot(grads, *gamma, gv);
                    for (row_g, row_h) in gd.chunks_exact(cols).zip(xhat.chunks_exact(cols)) {
                        for c in 0..cols {
                            gg.data_mut()[c] = gg.data()[c] + row_g[c] * row_h[c];
                        }
                    }
                }
                {
                    let bv = &self.nodes[*beta].value;
                    let gb = slot(grads, *beta, bv);
                    for row_g in gd.chunks_exact(cols) {
                        axpy(gb.data_mut(), row_g, F::one());
                    }
                }
                let n = F::of(cols as f64);
                let gx = slot(grads, *x, xv);
                let mut dxhat = vec![F::zero(); cols];
                for (r, (row_g, row_h)) in gd.chunks_exact(cols).zip(xhat.chunks_exact(cols)).enumerate() {
                    let mut sum_d = F::zero();
                    let mut sum_dh = F::zero();
                    for c in 0..cols {
                        dxhat[c] = row_g[c] * gamma_vals[c];
                        sum_d = sum_d + dxhat[c];
                        sum_dh = sum_dh + dxhat[c] * row_h[c];
                    }
                    let k = inv_std[r] / n;
                    let out = &mut gx.data_mut()[r * cols..(r + 1) * cols];
                    for c in 0..cols {
                        out[c] = out[c] + k * (n * dxhat[c] - sum_d - row_h[c] * sum_dh);
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                shape,
                probs,
            } => {
                let (qv, kv, vv) = (
                    &self.nodes[*q].value,
                    &self.nodes[*k].value,
                    &self.nodes[*v].value,
                );
                let mut dq = vec![F::zero(); qv.len()];
                let mut dk = vec![F::zero(); kv.len()];
                let mut dv = vec![F::zero(); vv.len()];
                kernels::attention_backward(
                    qv.data(),
                    kv.data(),
                    vv.data(),
                    probs,
                    gd,
                    *shape,
                    &mut dq,
                    &mut dk,
                    &mut dv,
                );
                axpy(slot(grads, *q, qv).data_mut(), &dq, F::one());
                axpy(slot(grads, *k, kv).data_mut(), &dk, F::one());
                axpy(slot(grads, *v, vv).data_mut(), &dv, F::one());
            }
            Op::NeighborSum(h, lists) => {
                let hv = &self.nodes[*h].value;
                let d = hv.cols();
                let gh = slot(grads, *h, hv);
                axpy(gh.data_mut(), gd, F::one());
                for (i, list) in lists.iter().enumerate() {
                    for &j in list {
                        let gi = &gd[i * d..(i + 1) * d];
                        axpy(&mut gh.data_mut()[j * d..(j + 1) * d], gi, F::one());
                    }
                }
            }
            Op::RepeatRows(x, times) => {
                let xv = &self.nodes[*x].value;
                let c = xv.cols();
                let gx = slot(grads, *x, xv);
                for (r, chunk) in gd.chunks_exact(c * times).enumerate() {
                    for row in chunk.chunks_exact(c) {
                        axpy(&mut gx.data_mut()[r * c..(r + 1) * c], row, F::one());
                    }
                }
            }
            Op::ConcatCols(a, b) => {
                let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                let (ca, cb) = (av.cols(), bv.cols());
                {
                    let ga = slot(grads, *a, av);
                    for (r, row) in gd.chunks_exact(ca + cb).enumerate() {
                        axpy(&mut ga.data_mut()[r * ca..(r + 1) * ca], &row[..ca], F::one());
                    }
                }
                let gb = slot(grads, *b, bv);
                for (r, row) in gd.chunks_exact(ca + cb).enumerate() {
                    axpy(&mut gb.data_mut()[r * cb..(r + 1) * cb], &row[ca..], F::one());
                }
            }
            Op::Bezier { offsets, basis } => {
                let ov = &self.nodes[*offsets].value;
                let t_out = basis.horizon();
                let go = slot(grads, *offsets, ov);
                for (i, up) in gd.chunks_exact(2 * t_out).enumerate() {
                    let dctrl = basis.gradient(up);
                    let row = &mut go.data_mut()[i * 8..(i + 1) * 8];
                    // P_k = P_0 + ΔP_k, so dL/dΔP_k = dL/dP_k for k ≥ 1.
                    for kk in 1..5 {
                        row[2 * (kk - 1)] = row[2 * (kk - 1)] + dctrl[kk][0];
                        row[2 * (kk - 1) + 1] = row[2 * (kk - 1) + 1] + dctrl[kk][1];
                    }
                }
            }
            Op::MaskedL2 { pred, target, mask } => {
                let pv = &self.nodes[*pred].value;
                let scale = gd[0];
                let gp = slot(grads, *pred, pv);
                crate::training::loss::masked_l2_grad_acc(pv, target, mask, scale, gp.data_mut());
            }
            Op::Sum(x) => {
                let xv = &self.nodes[*x].value;
                let gx = slot(grads, *x, xv);
                for o in gx.data_mut() {
                    *o = *o + gd[0];
                }
            }
        }
    }
}

fn slot<'a, F: Real>(grads: &'a mut [Option<Tensor<F>>], idx: usize, like: &Tensor<F>) -> &'a mut Tensor<F> {
    grads[idx].get_or_insert_with(|| Tensor::zeros(like.shape().to_vec()))
}

fn axpy<F: Real>(y: &mut [F], x: &[F], a: F) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + a * xi;
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<F: Real = f64> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Real> Gradients<F> {
    /// `None` when `v` does not influence the loss (parameters excepted:
    /// they always carry a gradient, zero if unreached).
    pub fn get(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<F>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}
