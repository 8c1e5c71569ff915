//! Decoder memory and the compact one-query transformer decoder.
//!
//! Each vehicle's memory is its `T_in` displacement rows concatenated with
//! the lifted interaction sequence. A single learned query per vehicle
//! passes through the decoder layers (pre-norm self-attention, cross-
//! attention over that vehicle's memory, feed-forward) and the final query
//! state is the latent token. The pass runs exactly once per vehicle
//! whatever the prediction horizon.

use rand::Rng;

use crate::encoder::{Dropout, LinearVars};
use crate::error::Result;
use crate::numerics::{Real, Tape, Var};

#[derive(Debug, Clone, Copy)]
pub struct NormVars {
    pub gamma: Var,
    pub beta: Var,
}

impl NormVars {
    pub const EPS: f64 = 1e-5;

    pub fn apply<F: Real>(&self, tape: &mut Tape<F>, x: Var) -> Result<Var> {
        tape.layer_norm(x, self.gamma, self.beta, Self::EPS)
    }
}

fn maybe_norm<F: Real>(tape: &mut Tape<F>, norm: Option<NormVars>, x: Var) -> Result<Var> {
    match norm {
        Some(n) => n.apply(tape, x),
        None => Ok(x),
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub q: LinearVars,
    pub k: LinearVars,
    pub v: LinearVars,
    pub o: LinearVars,
}

#[derive(Debug, Clone, Copy)]
pub struct DecoderLayerVars {
    pub norm_self: Option<NormVars>,
    pub self_attn: AttentionVars,
    pub norm_cross: Option<NormVars>,
    pub cross_attn: AttentionVars,
    pub norm_ff: Option<NormVars>,
    pub ff_in: LinearVars,
    pub ff_out: LinearVars,
}

#[derive(Debug, Clone, Copy)]
pub struct DecoderVars<'a> {
    pub input: LinearVars,
    pub query: Var,
    pub layers: &'a [DecoderLayerVars],
    pub heads: usize,
    pub slope: f64,
}

/// `Dec_in = [ΔC ; Z]` slot by slot, displacements first.
///
/// `displacements` is `(N·T_in) × 2`, `z_seq` is `(N·T_in) × D`.
pub fn build_memory<F: Real>(tape: &mut Tape<F>, displacements: Var, z_seq: Var) -> Result<Var> {
    tape.concat_cols(displacements, z_seq)
}

fn attend<F: Real>(tape: &mut Tape<F>, a: &AttentionVars, query_src: Var, memory: Var, groups: usize, heads: usize) -> Result<Var> {
    let q = a.q.apply(tape, query_src)?;
    let k = a.k.apply(tape, memory)?;
    let v = a.v.apply(tape, memory)?;
    let ctx = tape.attention(q, k, v, groups, heads)?;
    a.o.apply(tape, ctx)
}

/// One latent token (`N × d_model`) from `Dec_in` (`(N·T_in) × (2+D)`).
pub fn decode_latent<F: Real, R: Rng + ?Sized>(
    tape: &mut Tape<F>,
    dec: &DecoderVars<'_>,
    dec_in: Var,
    n_vehicles: usize,
    dropout: &mut Dropout<'_, R>,
) -> Result<Var> {
    let memory = dec.input.apply(tape, dec_in)?;
    let mut x = tape.repeat_rows(dec.query, n_vehicles);
    for layer in dec.layers {
        // the target sequence has length 1, so self-attention reduces to W_o·W_v·x
        let a = maybe_norm(tape, layer.norm_self, x)?;
        let s = attend(tape, &layer.self_attn, a, a, n_vehicles, dec.heads)?;
        x = tape.add(x, s)?;

        let b = maybe_norm(tape, layer.norm_cross, x)?;
        let c = attend(tape, &layer.cross_attn, b, memory, n_vehicles, dec.heads)?;
        x = tape.add(x, c)?;

        let f = maybe_norm(tape, layer.norm_ff, x)?;
        let f = layer.ff_in.apply(tape, f)?;
        let f = tape.leaky_relu(f, F::of(dec.slope));
        let f = dropout.apply(tape, f);
        let f = layer.ff_out.apply(tape, f)?;
        x = tape.add(x, f)?;
    }
    Ok(x)
}
