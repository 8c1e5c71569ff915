//! Temporal projection, graph interaction encoding, residual fusion and
//! lifting of the fused feature back to a `T_in`-long sequence.

use rand::Rng;

use crate::edge_builder::EdgeSet;
use crate::error::Result;
use crate::numerics::{Real, Tape, Tensor, Var};

/// Dropout settings threaded through a forward pass. Evaluation passes use
/// [`Dropout::off`].
pub struct Dropout<'a, R: Rng + ?Sized = crate::rng::Rng> {
    rng: Option<&'a mut R>,
    p: f64,
}

impl<'a, R: Rng + ?Sized> Dropout<'a, R> {
    pub fn new(rng: &'a mut R, p: f64) -> Self {
        Self { rng: Some(rng), p }
    }

    pub fn apply<F: Real>(&mut self, tape: &mut Tape<F>, x: Var) -> Var {
        match self.rng.as_deref_mut() {
            Some(rng) if self.p > 0.0 => tape.dropout(x, self.p, rng),
            _ => x,
        }
    }
}

impl Dropout<'static, crate::rng::Rng> {
    pub fn off() -> Self {
        Self { rng: None, p: 0.0 }
    }
}

/// A linear map bound on a tape.
#[derive(Debug, Clone, Copy)]
pub struct LinearVars {
    pub w: Var,
    pub b: Option<Var>,
}

impl LinearVars {
    pub fn apply<F: Real>(&self, tape: &mut Tape<F>, x: Var) -> Result<Var> {
        tape.linear(x, self.w, self.b)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BranchVars<'a> {
    pub temporal_cx: LinearVars,
    pub temporal_delta: LinearVars,
    pub gie_cx: &'a [LinearVars],
    pub gie_delta: &'a [LinearVars],
    pub proj: Var,
    pub alpha: Var,
    pub beta: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct EncoderVars<'a> {
    pub temporal: LinearVars,
    pub gie: &'a [LinearVars],
    pub branches: Option<BranchVars<'a>>,
    pub slope: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct TemporalEmbeddings {
    pub main: Var,
    pub cx: Option<Var>,
    pub delta: Option<Var>,
}

/// `h_main = LeakyReLU(W·[x_cx; x_Δ] + b)`; the stream-specific branches are
/// computed only when residual separation is on.
///
/// `x_cx` and `x_delta` are `N × 2·T_in` (flattened positions/displacements).
pub fn temporal_encode<F: Real, R: Rng + ?Sized>(
    tape: &mut Tape<F>,
    enc: &EncoderVars<'_>,
    x_cx: Var,
    x_delta: Var,
    dropout: &mut Dropout<'_, R>,
) -> Result<TemporalEmbeddings> {
    let slope = F::of(enc.slope);
    let x_real = tape.concat_cols(x_cx, x_delta)?;
    let h = enc.temporal.apply(tape, x_real)?;
    let h = tape.leaky_relu(h, slope);
    let main = dropout.apply(tape, h);
    let (cx, delta) = match &enc.branches {
        Some(b) => {
            let hc = b.temporal_cx.apply(tape, x_cx)?;
            let hc = tape.leaky_relu(hc, slope);
            let hd = b.temporal_delta.apply(tape, x_delta)?;
            let hd = tape.leaky_relu(hd, slope);
            (Some(dropout.apply(tape, hc)), Some(dropout.apply(tape, hd)))
        }
        None => (None, None),
    };
    Ok(TemporalEmbeddings { main, cx, delta })
}

/// GIN-style message passing with `ε = 0`:
/// `z_i = LeakyReLU(W·(h_i + Σ_{j∈E_i} h_j) + b)`, once per layer.
pub fn gie_forward<F: Real>(tape: &mut Tape<F>, h: Var, edges: &EdgeSet, layers: &[LinearVars], slope: f64) -> Result<Var> {
    let mut x = h;
    for layer in layers {
        let agg = tape.neighbor_sum(x, edges.shared_lists())?;
        let y = layer.apply(tape, agg)?;
        x = tape.leaky_relu(y, F::of(slope));
    }
    Ok(x)
}

/// `z = z_main + α·Proj(z_cx) + β·Proj(z_Δ)`; returns `z_main` untouched
/// when there are no branches.
pub fn residual_fuse<F: Real>(tape: &mut Tape<F>, z_main: Var, branches: Option<(Var, Var)>, proj: Var, alpha: Var, beta: Var) -> Result<Var> {
    let Some((z_cx, z_delta)) = branches else {
        return Ok(z_main);
    };
    let pc = tape.matmul(z_cx, proj)?;
    let pc = tape.scale_by(pc, alpha)?;
    let pd = tape.matmul(z_delta, proj)?;
    let pd = tape.scale_by(pd, beta)?;
    let z = tape.add(z_main, pc)?;
    tape.add(z, pd)
}

/// Runs the whole encoder and returns the fused `N × D` feature.
pub fn encode<F: Real, R: Rng + ?Sized>(
    tape: &mut Tape<F>,
    enc: &EncoderVars<'_>,
    x_cx: Var,
    x_delta: Var,
    edges: &EdgeSet,
    dropout: &mut Dropout<'_, R>,
) -> Result<Var> {
    let h = temporal_encode(tape, enc, x_cx, x_delta, dropout)?;
    let z_main = gie_forward(tape, h.main, edges, enc.gie, enc.slope)?;
    match (&enc.branches, h.cx, h.delta) {
        (Some(b), Some(hc), Some(hd)) => {
            let zc = gie_forward(tape, hc, edges, b.gie_cx, enc.slope)?;
            let zd = gie_forward(tape, hd, edges, b.gie_delta, enc.slope)?;
            residual_fuse(tape, z_main, Some((zc, zd)), b.proj, b.alpha, b.beta)
        }
        _ => Ok(z_main),
    }
}

/// Sinusoidal table: `PE(s, 2i) = sin(s / 10000^(2i/D))`, `PE(s, 2i+1) = cos(·)`.
pub fn positional_encoding(len: usize, dim: usize) -> Tensor {
    let mut data = vec![0.0; len * dim];
    for s in 0..len {
        for c in 0..dim {
            let pair = (c / 2) as f64 * 2.0;
            let angle = s as f64 / 10000f64.powf(pair / dim as f64);
            data[s * dim + c] = if c % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(vec![len, dim], data).expect("consistent shape")
}

/// Tiles each `z_i` across `T_in` slots (rows `i*T_in .. (i+1)*T_in`), adding
/// the positional table when enabled.
pub fn to_sequence<F: Real>(tape: &mut Tape<F>, z: Var, t_in: usize, encode_position: bool) -> Result<Var> {
    let n = tape.value(z).rows();
    let d = tape.value(z).cols();
    let seq = tape.repeat_rows(z, t_in);
    if !encode_position {
        return Ok(seq);
    }
    let pe = positional_encoding(t_in, d);
    let mut tiled = Vec::with_capacity(n * t_in * d);
    for _ in 0..n {
        tiled.extend(pe.data().iter().map(|&v| F::of(v)));
    }
    let pe = Tensor::new(vec![n * t_in, d], tiled)?;
    tape.add_const(seq, &pe)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lin(tape: &mut Tape, w: Tensor, b: Option<Tensor>) -> LinearVars {
        LinearVars {
            w: tape.param(w),
            b: b.map(|b| tape.param(b)),
        }
    }

    #[test]
    fn zero_history_zero_bias_gives_zero_embedding() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(vec![1, 30]));
        let d = tape.leaf(Tensor::zeros(vec![1, 30]));
        let w = Tensor::filled(vec![60, 64], 0.3);
        let temporal = lin(&mut tape, w, Some(Tensor::zeros(vec![1, 64])));
        let enc = EncoderVars {
            temporal,
            gie: &[],
            branches: None,
            slope: 0.01,
        };
        let h = temporal_encode(&mut tape, &enc, x, d, &mut Dropout::off()).unwrap();
        assert_eq!(tape.value(h.main).shape(), &[1, 64]);
        assert!(tape.value(h.main).data().iter().all(|&v| v == 0.0));
        assert!(h.cx.is_none());
    }

    #[test]
    fn temporal_matches_direct_formula() {
        let mut tape = Tape::new();
        let xc: Vec<f64> = (0..4).map(|i| i as f64 * 0.5 - 1.0).collect();
        let xd: Vec<f64> = vec![0.0, 0.0, 0.25, -0.75];
        let w: Vec<f64> = (0..8 * 3).map(|i| ((i * 7 % 11) as f64 - 5.0) * 0.1).collect();
        let b = vec![0.05, -0.2, 0.0];
        let xcv = tape.leaf(Tensor::new(vec![1, 4], xc.clone()).unwrap());
        let xdv = tape.leaf(Tensor::new(vec![1, 4], xd.clone()).unwrap());
        let temporal = lin(
            &mut tape,
            Tensor::new(vec![8, 3], w.clone()).unwrap(),
            Some(Tensor::new(vec![1, 3], b.clone()).unwrap()),
        );
        let enc = EncoderVars {
            temporal,
            gie: &[],
            branches: None,
            slope: 0.01,
        };
        let h = temporal_encode(&mut tape, &enc, xcv, xdv, &mut Dropout::off()).unwrap();
        let x: Vec<f64> = xc.iter().chain(&xd).copied().collect();
        for c in 0..3 {
            let pre: f64 = b[c] + (0..8).map(|r| x[r] * w[r * 3 + c]).sum::<f64>();
            let expect = if pre > 0.0 { pre } else { 0.01 * pre };
            assert!((tape.value(h.main).data()[c] - expect).abs() <= 1e-12);
        }
    }

    #[test]
    fn gie_without_edges_is_plain_mlp() {
        let mut tape = Tape::new();
        let h = tape.leaf(Tensor::from_rows(&[&[1.0, -2.0], &[0.5, 0.5]]).unwrap());
        let layer = lin(&mut tape, Tensor::from_rows(&[&[1.0, 2.0], &[-1.0, 0.5]]).unwrap(), Some(Tensor::zeros(vec![1, 2])));
        let z = gie_forward(&mut tape, h, &EdgeSet::empty(2), &[layer], 0.01).unwrap();
        let mut t2 = Tape::new();
        let h2 = t2.leaf(tape.value(h).clone());
        let w2 = t2.leaf(tape.value(layer.w).clone());
        let y = t2.matmul(h2, w2).unwrap();
        let y = t2.leaky_relu(y, 0.01);
        assert_eq!(tape.value(z), t2.value(y));
    }

    #[test]
    fn gie_line_graph_sums_neighbors() {
        // 0 - 1 - 2 with identity MLP: z_i = h_i + Σ h_j
        let mut tape = Tape::new();
        let h = tape.leaf(Tensor::from_rows(&[&[1.0, 0.0], &[2.0, 1.0], &[4.0, 3.0]]).unwrap());
        let layer = lin(&mut tape, Tensor::eye(2), None);
        let edges = EdgeSet::from_lists(vec![vec![1], vec![0, 2], vec![1]]);
        let z = gie_forward(&mut tape, h, &edges, &[layer], 0.01).unwrap();
        assert_eq!(tape.value(z).data(), &[3.0, 1.0, 7.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn gie_symmetric_pair() {
        let mut tape = Tape::new();
        let h = tape.leaf(Tensor::from_rows(&[&[0.3, -0.1], &[0.3, -0.1]]).unwrap());
        let layer = lin(&mut tape, Tensor::from_rows(&[&[0.2, 0.7], &[-0.4, 0.1]]).unwrap(), Some(Tensor::from_rows(&[&[0.1, 0.0]]).unwrap()));
        let z = gie_forward(&mut tape, h, &EdgeSet::from_lists(vec![vec![1], vec![0]]), &[layer], 0.01).unwrap();
        let z = tape.value(z);
        assert_eq!(z.row(0), z.row(1));
    }

    #[test]
    fn gie_rejects_out_of_range_edge() {
        let mut tape = Tape::new();
        let h = tape.leaf(Tensor::zeros(vec![2, 2]));
        let layer = lin(&mut tape, Tensor::eye(2), None);
        let edges = EdgeSet::from_lists(vec![vec![5], vec![]]);
        assert!(gie_forward(&mut tape, h, &edges, &[layer], 0.01).is_err());
    }

    #[test]
    fn fuse_cases() {
        let zm = Tensor::from_rows(&[&[1.0, 2.0, 3.0]]).unwrap();
        let zc = Tensor::from_rows(&[&[0.5, -1.0]]).unwrap();
        let zd = Tensor::from_rows(&[&[2.0, 0.25]]).unwrap();
        let p = Tensor::from_rows(&[&[0.1, 0.2, 0.3], &[-0.4, 0.5, 0.6]]).unwrap();
        let run = |a: f64, b: f64, zc: &Tensor, zd: &Tensor| {
            let mut tape = Tape::new();
            let vm = tape.leaf(zm.clone());
            let vc = tape.leaf(zc.clone());
            let vd = tape.leaf(zd.clone());
            let vp = tape.param(p.clone());
            let va = tape.param(Tensor::scalar(a));
            let vb = tape.param(Tensor::scalar(b));
            let z = residual_fuse(&mut tape, vm, Some((vc, vd)), vp, va, vb).unwrap();
            tape.value(z).clone()
        };
        assert_eq!(run(0.0, 0.0, &zc, &zd), zm);
        assert_eq!(run(0.1, 0.1, &Tensor::zeros(vec![1, 2]), &Tensor::zeros(vec![1, 2])), zm);
        let z = run(0.3, -0.7, &zc, &zd);
        for c in 0..3 {
            let pc: f64 = (0..2).map(|r| zc.data()[r] * p.at(r, c)).sum();
            let pd: f64 = (0..2).map(|r| zd.data()[r] * p.at(r, c)).sum();
            let expect = zm.data()[c] + 0.3 * pc - 0.7 * pd;
            assert!((z.data()[c] - expect).abs() <= 1e-12);
        }
        let mut tape = Tape::new();
        let vm = tape.leaf(zm.clone());
        let dummy = tape.leaf(Tensor::scalar(0.0));
        let z = residual_fuse(&mut tape, vm, None, dummy, dummy, dummy).unwrap();
        assert_eq!(z, vm);
    }

    #[test]
    fn sequence_tiling_and_encoding() {
        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::from_rows(&[&[1.0, 2.0]]).unwrap());
        let s = to_sequence(&mut tape, z, 4, false).unwrap();
        assert_eq!(tape.value(s).data(), &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);

        let z = tape.leaf(Tensor::zeros(vec![3, 6]));
        let s = to_sequence(&mut tape, z, 15, true).unwrap();
        assert_eq!(tape.value(s).shape(), &[45, 6]);
        for slot in 0..15 {
            for c in 0..6 {
                let i = (c / 2) as f64;
                let angle = slot as f64 / 10000f64.powf(2.0 * i / 6.0);
                let expect = if c % 2 == 0 { angle.sin() } else { angle.cos() };
                assert!((tape.value(s).at(15 + slot, c) - expect).abs() < 1e-15);
            }
        }
    }
}
