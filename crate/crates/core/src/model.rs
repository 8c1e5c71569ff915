//! The full predictor: parameters, checkpoints and the forward pass from a
//! scene window to Bézier curve samples.

use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::container::Container;
use crate::curve_head::{BernsteinBasis, HEAD_OUTPUTS};
use crate::data::SceneWindow;
use crate::decoder::{self, AttentionVars, DecoderLayerVars, DecoderVars, NormVars};
use crate::edge_builder::EdgeSet;
use crate::encoder::{self, BranchVars, Dropout, EncoderVars, LinearVars};
use crate::error::{Error, Result};
use crate::numerics::{OpCount, Real, Tape, Tensor, Var};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub t_in: usize,
    pub t_out: usize,
    /// Main embedding width `D`.
    pub d_main: usize,
    /// Branch embedding width `D_b`.
    pub d_branch: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub heads: usize,
    pub decoder_layers: usize,
    pub gie_layers: usize,
    /// Separate position/displacement branches fused through `α`, `β`.
    pub residual: bool,
    pub layer_norm: bool,
    pub positional_encoding: bool,
    pub dropout: f64,
    pub leaky_slope: f64,
    /// Shift every window so the anchor centroid is the origin.
    pub recenter: bool,
    /// Positions are divided by this before entering the encoder.
    pub position_scale: f64,
    /// Displacements are divided by this before entering the encoder and
    /// the decoder memory.
    pub displacement_scale: f64,
    /// Head outputs are multiplied by this to give control-point offsets.
    pub offset_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            t_in: crate::data::DEFAULT_T_IN,
            t_out: crate::data::DEFAULT_T_OUT,
            d_main: 64,
            d_branch: 32,
            d_model: 64,
            d_ff: 128,
            heads: 2,
            decoder_layers: 2,
            gie_layers: 1,
            residual: false,
            layer_norm: true,
            positional_encoding: true,
            dropout: 0.2,
            leaky_slope: 0.01,
            recenter: true,
            position_scale: 30.0,
            displacement_scale: 1.0,
            offset_scale: 30.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("t_in", self.t_in),
            ("t_out", self.t_out),
            ("d_main", self.d_main),
            ("d_branch", self.d_branch),
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("heads", self.heads),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "{} heads do not divide d_model = {}",
                self.heads, self.d_model
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        for (name, v) in [
            ("position_scale", self.position_scale),
            ("displacement_scale", self.displacement_scale),
            ("offset_scale", self.offset_scale),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} {v} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct BranchLayout {
    temporal_cx: LinearVars,
    temporal_delta: LinearVars,
    gie_cx: Vec<LinearVars>,
    gie_delta: Vec<LinearVars>,
    proj: Var,
    alpha: Var,
    beta: Var,
}

/// Where each parameter lives. Parameters are bound at the start of a fresh
/// tape in storage order, so parameter `i` is tape node `i`.
#[derive(Debug, Clone)]
struct Layout {
    temporal: LinearVars,
    gie: Vec<LinearVars>,
    branch: Option<BranchLayout>,
    input: LinearVars,
    query: Var,
    layers: Vec<DecoderLayerVars>,
    head: LinearVars,
}

struct Builder<'r> {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    rng: &'r mut Rng,
}

impl Builder<'_> {
    fn add(&mut self, name: String, t: Tensor) -> Var {
        self.names.push(name);
        self.tensors.push(t);
        Var::from_index(self.tensors.len() - 1)
    }

    fn uniform(&mut self, name: String, shape: Vec<usize>, bound: f64) -> Var {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.random_range(-bound..=bound)).collect();
        self.add(name, Tensor::new(shape, data).expect("consistent shape"))
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize, bias: bool) -> LinearVars {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = self.uniform(format!("{name}.weight"), vec![fan_in, fan_out], bound);
        let b = bias.then(|| self.uniform(format!("{name}.bias"), vec![1, fan_out], bound));
        LinearVars { w, b }
    }

    fn norm(&mut self, name: &str, dim: usize, enabled: bool) -> Option<NormVars> {
        enabled.then(|| NormVars {
            gamma: self.add(format!("{name}.gamma"), Tensor::filled(vec![1, dim], 1.0)),
            beta: self.add(format!("{name}.beta"), Tensor::zeros(vec![1, dim])),
        })
    }

    fn attention(&mut self, name: &str, d: usize) -> AttentionVars {
        let q = self.linear(&format!("{name}.q"), d, d, true);
        let k = self.linear(&format!("{name}.k"), d, d, true);
        let v = self.linear(&format!("{name}.v"), d, d, true);
        let o = self.linear(&format!("{name}.o"), d, d, true);
        AttentionVars { q, k, v, o }
    }

    fn gie(&mut self, name: &str, layers: usize, d: usize) -> Vec<LinearVars> {
        (0..layers).map(|l| self.linear(&format!("{name}.{l}"), d, d, true)).collect()
    }
}

fn build_layout(cfg: &ModelConfig, rng: &mut Rng) -> (Vec<String>, Vec<Tensor>, Layout) {
    let mut b = Builder {
        names: Vec::new(),
        tensors: Vec::new(),
        rng,
    };
    let (d, db, dm) = (cfg.d_main, cfg.d_branch, cfg.d_model);
    let temporal = b.linear("encoder.temporal", 4 * cfg.t_in, d, true);
    let gie = b.gie("encoder.gie", cfg.gie_layers, d);
    let branch = cfg.residual.then(|| BranchLayout {
        temporal_cx: b.linear("encoder.temporal_cx", 2 * cfg.t_in, db, true),
        temporal_delta: b.linear("encoder.temporal_delta", 2 * cfg.t_in, db, true),
        gie_cx: b.gie("encoder.gie_cx", cfg.gie_layers, db),
        gie_delta: b.gie("encoder.gie_delta", cfg.gie_layers, db),
        proj: b.linear("encoder.proj", db, d, false).w,
        alpha: b.add("encoder.alpha".into(), Tensor::scalar(0.1)),
        beta: b.add("encoder.beta".into(), Tensor::scalar(0.1)),
    });
    let input = b.linear("decoder.input", 2 + d, dm, true);
    let query = b.uniform("decoder.query".into(), vec![1, dm], 1.0 / (dm as f64).sqrt());
    let layers = (0..cfg.decoder_layers)
        .map(|l| {
            let p = format!("decoder.layer{l}");
            DecoderLayerVars {
                norm_self: b.norm(&format!("{p}.norm_self"), dm, cfg.layer_norm),
                self_attn: b.attention(&format!("{p}.self_attn"), dm),
                norm_cross: b.norm(&format!("{p}.norm_cross"), dm, cfg.layer_norm),
                cross_attn: b.attention(&format!("{p}.cross_attn"), dm),
                norm_ff: b.norm(&format!("{p}.norm_ff"), dm, cfg.layer_norm),
                ff_in: b.linear(&format!("{p}.ff_in"), dm, cfg.d_ff, true),
                ff_out: b.linear(&format!("{p}.ff_out"), cfg.d_ff, dm, true),
            }
        })
        .collect();
    let head = b.linear("head", dm, HEAD_OUTPUTS, true);
    let layout = Layout {
        temporal,
        gie,
        branch,
        input,
        query,
        layers,
        head,
    };
    (b.names, b.tensors, layout)
}

impl Layout {
    fn encoder(&self, cfg: &ModelConfig) -> EncoderVars<'_> {
        EncoderVars {
            temporal: self.temporal,
            gie: &self.gie,
            branches: self.branch.as_ref().map(|b| BranchVars {
                temporal_cx: b.temporal_cx,
                temporal_delta: b.temporal_delta,
                gie_cx: &b.gie_cx,
                gie_delta: &b.gie_delta,
                proj: b.proj,
                alpha: b.alpha,
                beta: b.beta,
            }),
            slope: cfg.leaky_slope,
        }
    }

    fn decoder(&self, cfg: &ModelConfig) -> DecoderVars<'_> {
        DecoderVars {
            input: self.input,
            query: self.query,
            layers: &self.layers,
            heads: cfg.heads,
            slope: cfg.leaky_slope,
        }
    }
}

/// Model inputs for one window, already shifted by `origin`.
#[derive(Debug, Clone)]
pub struct Inputs<F: Real = f64> {
    /// `N × 2·T_in`
    pub positions: Tensor<F>,
    /// `N × 2·T_in`
    pub displacements: Tensor<F>,
    /// `N × 2`
    pub anchors: Tensor<F>,
    pub origin: [f64; 2],
}

impl<F: Real> Inputs<F> {
    pub fn from_window(w: &SceneWindow, recenter: bool) -> Result<Self> {
        let origin = if recenter { w.centroid() } else { [0.0, 0.0] };
        let (n, t) = (w.n_vehicles(), w.t_in());
        let shift = |t: &Tensor| -> Vec<F> {
            t.data()
                .chunks_exact(2)
                .flat_map(|p| [F::of(p[0] - origin[0]), F::of(p[1] - origin[1])])
                .collect()
        };
        Ok(Self {
            positions: Tensor::new(vec![n, 2 * t], shift(&w.positions_in))?,
            displacements: w.displacements_in.cast::<F>().reshape(vec![n, 2 * t])?,
            anchors: Tensor::new(vec![n, 2], shift(&w.last_positions))?,
            origin,
        })
    }

    pub fn n_vehicles(&self) -> usize {
        self.anchors.rows()
    }
}

/// Nodes produced by [`ModelParams::forward`].
#[derive(Debug, Clone, Copy)]
pub struct Outputs {
    /// `N × d_model`
    pub latent: Var,
    /// `N × 8`
    pub offsets: Var,
    /// `N × 2·T_out`, in the shifted frame.
    pub samples: Var,
    pub counts: StageCounts,
}

/// Tape nodes and arithmetic spent in each stage of one forward pass.
/// The encoder stage includes assembling the decoder memory.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StageCounts {
    pub encoder: OpCount,
    pub decoder: OpCount,
    pub head: OpCount,
    pub curve: OpCount,
}

#[derive(Debug, Clone)]
pub struct ModelParams {
    pub config: ModelConfig,
    names: Vec<String>,
    tensors: Vec<Tensor>,
    layout: Layout,
}

impl PartialEq for ModelParams {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.names == other.names && self.tensors == other.tensors
    }
}

impl ModelParams {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(seed, "init", 0);
        let (names, tensors, layout) = build_layout(&config, &mut rng);
        Ok(Self {
            config,
            names,
            tensors,
            layout,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names.iter().position(|n| n == name).map(move |i| &mut self.tensors[i])
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Pushes every parameter onto an empty tape; returns their nodes.
    pub fn bind<F: Real>(&self, tape: &mut Tape<F>) -> Result<Vec<Var>> {
        bind_tensors(tape, self.tensors.iter().map(Tensor::cast::<F>))
    }

    /// Full forward on a tape to which [`ModelParams::bind`] has been applied.
    pub fn forward<F: Real, R: rand::Rng + ?Sized>(
        &self,
        tape: &mut Tape<F>,
        inputs: &Inputs<F>,
        edges: &EdgeSet,
        dropout: &mut Dropout<'_, R>,
    ) -> Result<Outputs> {
        forward(tape, &self.layout, &self.config, inputs, edges, dropout)
    }

    pub fn to_container(&self, seed: u64, config: Value) -> Container {
        let mut c = Container::new("checkpoint");
        c.seed = Some(seed);
        c.config = config;
        c.meta = json!({ "model": self.config, "param_count": self.param_count() });
        for (n, t) in self.names.iter().zip(&self.tensors) {
            c.push(n.clone(), t.clone());
        }
        c
    }

    pub fn from_container(c: Container) -> Result<Self> {
        let c = c.expect_kind("checkpoint")?;
        let model = c
            .meta
            .get("model")
            .ok_or_else(|| Error::Artifact("checkpoint carries no model config".into()))?;
        let config: ModelConfig =
            serde_json::from_value(model.clone()).map_err(|e| Error::Artifact(format!("model config: {e}")))?;
        let mut params = Self::init(config, 0).map_err(|e| Error::Artifact(e.to_string()))?;
        if c.tensors.len() != params.tensors.len() {
            return Err(Error::Artifact(format!(
                "checkpoint has {} tensors, configuration expects {}",
                c.tensors.len(),
                params.tensors.len()
            )));
        }
        for ((name, t), (want_name, want)) in c.tensors.into_iter().zip(params.names.iter().zip(params.tensors.iter_mut())) {
            if &name != want_name || t.shape() != want.shape() {
                return Err(Error::Artifact(format!(
                    "tensor {name} {:?} does not match expected {want_name} {:?}",
                    t.shape(),
                    want.shape()
                )));
            }
            *want = t;
        }
        Ok(params)
    }

    pub fn save(&self, path: &Path, seed: u64, config: Value) -> Result<()> {
        self.to_container(seed, config).write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(Container::read(path)?)
    }

    /// Absolute predictions `N × T_out × 2` for one window (dropout off).
    pub fn predict(&self, window: &SceneWindow, edges: &EdgeSet) -> Result<Tensor> {
        Predictor::<f64>::new(self).predict(window, edges)
    }
}

fn bind_tensors<F: Real>(tape: &mut Tape<F>, tensors: impl Iterator<Item = Tensor<F>>) -> Result<Vec<Var>> {
    if !tape.is_empty() {
        return Err(Error::Contract("parameters must be bound to an empty tape".into()));
    }
    Ok(tensors.map(|t| tape.param(t)).collect())
}

fn forward<F: Real, R: rand::Rng + ?Sized>(
    tape: &mut Tape<F>,
    layout: &Layout,
    cfg: &ModelConfig,
    inputs: &Inputs<F>,
    edges: &EdgeSet,
    dropout: &mut Dropout<'_, R>,
) -> Result<Outputs> {
    let n = inputs.n_vehicles();
    let t_in = cfg.t_in;
    if inputs.positions.shape() != [n, 2 * t_in] || edges.n_vehicles() != n {
        return Err(Error::dim("model forward", inputs.positions.shape(), &[n, 2 * t_in]));
    }
    let c0 = tape.count();
    let rescale = |t: &Tensor<F>, s: f64| Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| v / F::of(s)).collect());
    let positions = rescale(&inputs.positions, cfg.position_scale)?;
    let displacements = rescale(&inputs.displacements, cfg.displacement_scale)?;
    let x_cx = tape.leaf(positions);
    let x_delta = tape.leaf(displacements.clone());
    let z = encoder::encode(tape, &layout.encoder(cfg), x_cx, x_delta, edges, dropout)?;
    let z_seq = encoder::to_sequence(tape, z, t_in, cfg.positional_encoding)?;
    let disp_seq = tape.leaf(displacements.reshape(vec![n * t_in, 2])?);
    let dec_in = decoder::build_memory(tape, disp_seq, z_seq)?;
    let c1 = tape.count();
    let latent = decoder::decode_latent(tape, &layout.decoder(cfg), dec_in, n, dropout)?;
    let c2 = tape.count();
    let offsets = layout.head.apply(tape, latent)?;
    let offsets = tape.mul_const(offsets, F::of(cfg.offset_scale));
    let c3 = tape.count();
    let samples = tape.bezier(offsets, &inputs.anchors, BernsteinBasis::cached(cfg.t_out)?)?;
    let c4 = tape.count();
    Ok(Outputs {
        latent,
        offsets,
        samples,
        counts: StageCounts {
            encoder: c1 - c0,
            decoder: c2 - c1,
            head: c3 - c2,
            curve: c4 - c3,
        },
    })
}

/// Inference-only copy of the parameters at precision `F`.
#[derive(Debug, Clone)]
pub struct Predictor<F: Real> {
    config: ModelConfig,
    tensors: Vec<Tensor<F>>,
    layout: Layout,
    basis: std::sync::Arc<BernsteinBasis>,
}

impl<F: Real> Predictor<F> {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            config: params.config.clone(),
            tensors: params.tensors.iter().map(Tensor::cast).collect(),
            layout: params.layout.clone(),
            basis: BernsteinBasis::cached(params.config.t_out).expect("validated horizon"),
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn inputs(&self, window: &SceneWindow) -> Result<Inputs<F>> {
        Inputs::from_window(window, self.config.recenter)
    }

    /// Encoder, decoder and head: the `N × 8` control-point offsets.
    pub fn offsets(&self, inputs: &Inputs<F>, edges: &EdgeSet) -> Result<Tensor<F>> {
        let mut tape = Tape::new();
        bind_tensors(&mut tape, self.tensors.iter().cloned())?;
        let out = forward(&mut tape, &self.layout, &self.config, inputs, edges, &mut Dropout::off())?;
        Ok(tape.value(out.offsets).clone())
    }

    /// Samples the curves at `T_out` steps and undoes the input shift,
    /// giving absolute `N × T_out × 2` positions.
    pub fn reconstruct(&self, inputs: &Inputs<F>, offsets: &Tensor<F>) -> Result<Tensor<F>> {
        let n = inputs.n_vehicles();
        if offsets.shape() != [n, HEAD_OUTPUTS] {
            return Err(Error::dim("reconstruct", offsets.shape(), &[n, HEAD_OUTPUTS]));
        }
        let t_out = self.basis.horizon();
        let mut out = vec![F::zero(); n * t_out * 2];
        let (ox, oy) = (F::of(inputs.origin[0]), F::of(inputs.origin[1]));
        for i in 0..n {
            let anchor = [inputs.anchors.row(i)[0] + ox, inputs.anchors.row(i)[1] + oy];
            let ctrl = crate::curve_head::control_points(&anchor, offsets.row(i));
            self.basis.evaluate_into(&ctrl, &mut out[i * 2 * t_out..(i + 1) * 2 * t_out]);
        }
        Tensor::new(vec![n, t_out, 2], out)
    }

    pub fn predict(&self, window: &SceneWindow, edges: &EdgeSet) -> Result<Tensor<F>> {
        let inputs = self.inputs(window)?;
        let offsets = self.offsets(&inputs, edges)?;
        self.reconstruct(&inputs, &offsets)
    }
}
