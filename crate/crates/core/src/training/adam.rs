use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// How weight decay enters the update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightDecay {
    /// `g += wd · θ` before the moment updates.
    #[default]
    Coupled,
    /// `θ -= lr · wd · θ` applied separately from the adaptive step.
    Decoupled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub decay: WeightDecay,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay: WeightDecay::Coupled,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(params: &[Tensor], config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            second: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    /// One Adam update of every parameter.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64, weight_decay: f64) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} tensors, got {} params and {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let AdamConfig {
            beta1,
            beta2,
            eps,
            decay,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (idx, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::dim("optimizer_step", p.shape(), g.shape()));
            }
            let (m, v) = (&mut self.first[idx], &mut self.second[idx]);
            for (((theta, &grad), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let mut g = grad;
                if decay == WeightDecay::Coupled {
                    g += weight_decay * *theta;
                } else {
                    *theta -= lr * weight_decay * *theta;
                }
                *mi = beta1 * *mi + (1.0 - beta1) * g;
                *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *theta -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Free-function form of [`OptimizerState::step`].
pub fn optimizer_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    state: &mut OptimizerState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    state.step(params, grads, lr, weight_decay)
}
