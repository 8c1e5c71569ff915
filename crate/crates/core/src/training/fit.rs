use std::path::PathBuf;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, OptimizerState};
use super::schedule::MultiStepSchedule;
use crate::data::{Dataset, SceneWindow};
use crate::edge_builder::{build_edges, EdgeMode, EdgeSet};
use crate::encoder::Dropout;
use crate::error::{Error, Result};
use crate::metrics::{MetricAccumulator, MetricReport};
use crate::model::{Inputs, ModelConfig, ModelParams, Predictor};
use crate::numerics::{Tape, Tensor};
use crate::rng::{self, derive_seed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub milestones: Vec<usize>,
    pub gamma: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Interaction radius `r`, in dataset units.
    pub radius: f64,
    /// Neighbor cap `K`.
    pub cap: usize,
    pub adam: AdamConfig,
    pub model: ModelConfig,
    /// Save a checkpoint every this many epochs (0 disables).
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 80,
            lr: 1e-2,
            weight_decay: 5e-4,
            milestones: vec![40, 60, 70],
            gamma: 0.1,
            batch_size: 16,
            seed: 0,
            radius: 20.0,
            cap: 16,
            adam: AdamConfig::default(),
            model: ModelConfig::default(),
            checkpoint_every: 0,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> MultiStepSchedule {
        MultiStepSchedule {
            base_lr: self.lr,
            milestones: self.milestones.clone(),
            gamma: self.gamma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule().validate(self.epochs)?;
        self.model.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.radius > 0.0) || self.cap == 0 {
            return Err(Error::Config(format!("bad edge parameters r = {}, K = {}", self.radius, self.cap)));
        }
        if !(self.lr >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("learning rate and weight decay must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct FitOutput {
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
}

/// Loss history as CSV with columns `epoch,mean_loss,lr`.
pub fn history_csv(history: &[EpochRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "mean_loss", "lr"])?;
    for r in history {
        w.write_record([r.epoch.to_string(), format!("{:e}", r.mean_loss), format!("{:e}", r.lr)])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

struct Prepared {
    inputs: Inputs,
    target: Tensor,
    mask: Tensor,
    anchors: Vec<[f64; 2]>,
}

fn prepare(w: &SceneWindow, cfg: &ModelConfig) -> Result<Prepared> {
    if w.t_in() != cfg.t_in || w.t_out() != cfg.t_out {
        return Err(Error::Config(format!(
            "window horizons {}/{} differ from the model's {}/{}",
            w.t_in(),
            w.t_out(),
            cfg.t_in,
            cfg.t_out
        )));
    }
    let inputs = Inputs::from_window(w, cfg.recenter)?;
    let target = w.recentered(inputs.origin).futures;
    Ok(Prepared {
        anchors: anchor_list(w),
        inputs,
        target,
        mask: w.mask.clone(),
    })
}

fn anchor_list(w: &SceneWindow) -> Vec<[f64; 2]> {
    w.last_positions.data().chunks_exact(2).map(|p| [p[0], p[1]]).collect()
}

/// Trains freshly initialized parameters.
pub fn fit(dataset: &Dataset, cfg: &TrainConfig) -> Result<FitOutput> {
    let params = ModelParams::init(cfg.model.clone(), derive_seed(cfg.seed, "init", 0))?;
    fit_from(params, dataset, cfg, |_| {})
}

/// Trains `params` in place, reporting each finished epoch to `on_epoch`.
pub fn fit_from(
    mut params: ModelParams,
    dataset: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<FitOutput> {
    cfg.validate()?;
    if params.config != cfg.model {
        return Err(Error::Config("parameters were built for a different model configuration".into()));
    }
    if cfg.epochs > 0 && dataset.is_empty() {
        return Err(Error::Config("cannot train on an empty dataset".into()));
    }
    let prepared: Vec<Prepared> = dataset
        .windows
        .iter()
        .filter(|w| w.n_vehicles() > 0)
        .map(|w| prepare(w, &cfg.model))
        .collect::<Result<_>>()?;
    let schedule = cfg.schedule();
    let mut opt = OptimizerState::new(params.tensors(), cfg.adam);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..prepared.len()).collect();

    for epoch in 0..cfg.epochs {
        let lr = schedule.lr_at(epoch);
        order.sort_unstable();
        order.shuffle(&mut rng::stream(cfg.seed, "shuffle", epoch as u64));
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let batch_seed = derive_seed(derive_seed(cfg.seed, "edges", epoch as u64), "batch", b as u64);
            let mut dropout_rng = rng::stream(derive_seed(cfg.seed, "dropout", epoch as u64), "batch", b as u64);
            let mut grads: Vec<Tensor> = params.tensors().iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect();
            let scale = 1.0 / batch.len() as f64;
            for (j, &idx) in batch.iter().enumerate() {
                let p = &prepared[idx];
                let mode = EdgeMode::Sampled {
                    seed: derive_seed(batch_seed, "window", j as u64),
                };
                let edges = build_edges(&p.anchors, cfg.radius, cfg.cap, mode)?;
                let mut tape = Tape::new();
                let vars = params.bind(&mut tape)?;
                let mut dropout = Dropout::new(&mut dropout_rng, cfg.model.dropout);
                let out = params.forward(&mut tape, &p.inputs, &edges, &mut dropout)?;
                let loss = tape.masked_l2(out.samples, p.target.clone(), p.mask.clone())?;
                let value = tape.value(loss).data()[0];
                if !value.is_finite() {
                    return Err(divergence(&params, cfg, epoch, b));
                }
                epoch_loss += value;
                let mut g = tape.backward(loss)?;
                for (acc, &v) in grads.iter_mut().zip(&vars) {
                    if let Some(gv) = g.take(v) {
                        for (a, x) in acc.data_mut().iter_mut().zip(gv.data()) {
                            *a += scale * x;
                        }
                    }
                }
            }
            opt.step(params.tensors_mut(), &grads, lr, cfg.weight_decay)?;
        }
        let record = EpochRecord {
            epoch,
            mean_loss: epoch_loss / prepared.len().max(1) as f64,
            lr,
        };
        if !params.tensors().iter().all(Tensor::is_finite) {
            return Err(divergence(&params, cfg, epoch, order.len().div_ceil(cfg.batch_size)));
        }
        on_epoch(&record);
        history.push(record);
        if let (Some(dir), true) = (&cfg.checkpoint_dir, cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every.max(1) == 0) {
            let config = serde_json::to_value(cfg)?;
            params.save(&dir.join(format!("epoch{:03}.evtp", epoch + 1)), cfg.seed, config)?;
        }
    }
    Ok(FitOutput { params, history })
}

fn divergence(params: &ModelParams, cfg: &TrainConfig, epoch: usize, batch: usize) -> Error {
    let snapshot = cfg.checkpoint_dir.as_ref().and_then(|dir| {
        let path = dir.join("divergence.evtp");
        let config = serde_json::to_value(cfg).ok()?;
        params.save(&path, cfg.seed, config).ok().map(|_| path)
    });
    Error::Divergence { epoch, batch, snapshot }
}

/// Deterministic-edge evaluation. `None` for a dataset with no windows.
pub fn eval(dataset: &Dataset, params: &ModelParams, radius: f64, cap: usize) -> Result<Option<MetricReport>> {
    if dataset.is_empty() {
        return Ok(None);
    }
    let predictor = Predictor::<f64>::new(params);
    let mut acc = MetricAccumulator::new(crate::data::DEFAULT_RATE_HZ);
    for w in dataset.windows.iter().filter(|w| w.n_vehicles() > 0) {
        let edges: EdgeSet = build_edges(&anchor_list(w), radius, cap, EdgeMode::Deterministic)?;
        let pred = predictor.predict(w, &edges)?;
        acc.add(&pred, &w.futures, &w.mask)?;
    }
    acc.report().map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthesize_corpus, SyntheticSpec, Units, WindowConfig};

    fn tiny_model() -> ModelConfig {
        ModelConfig {
            t_in: 5,
            t_out: 6,
            d_main: 8,
            d_branch: 4,
            d_model: 8,
            d_ff: 16,
            ..ModelConfig::default()
        }
    }

    fn corpus(scenes: usize) -> Dataset {
        let spec = SyntheticSpec {
            n_vehicles: 4,
            ..SyntheticSpec::default()
        };
        let wc = WindowConfig {
            t_in: 5,
            t_out: 6,
            stride: 10,
            ..WindowConfig::default()
        };
        Dataset::new(synthesize_corpus(&spec, scenes, 40, &wc).unwrap(), 5, 6, Units::Meters)
    }

    fn cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            milestones: vec![],
            batch_size: 4,
            model: tiny_model(),
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_lr_leaves_parameters() {
        let ds = corpus(1);
        let c = TrainConfig { lr: 0.0, ..cfg(1) };
        let init = ModelParams::init(c.model.clone(), 7).unwrap();
        let out = fit_from(init.clone(), &ds, &c, |_| {}).unwrap();
        assert_eq!(out.params, init);
        assert_eq!(out.history.len(), 1);
    }

    #[test]
    fn deterministic_history() {
        let ds = corpus(2);
        let a = fit(&ds, &cfg(3)).unwrap();
        let b = fit(&ds, &cfg(3)).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let out = fit(&corpus(1), &cfg(0)).unwrap();
        assert!(out.history.is_empty());
        assert_eq!(out.params, ModelParams::init(tiny_model(), derive_seed(0, "init", 0)).unwrap());
    }

    #[test]
    fn rejects_bad_configs() {
        let ds = corpus(1);
        assert!(fit(&ds, &TrainConfig { batch_size: 0, ..cfg(1) }).is_err());
        assert!(fit(&ds, &TrainConfig { milestones: vec![5], ..cfg(3) }).is_err());
        assert!(fit(&Dataset::new(vec![], 5, 6, Units::Meters), &cfg(1)).is_err());
        let wrong = TrainConfig {
            model: ModelConfig { t_out: 7, ..tiny_model() },
            ..cfg(1)
        };
        assert!(fit(&ds, &wrong).is_err());
    }

    #[test]
    fn eval_is_stable_and_handles_empty() {
        let ds = corpus(1);
        let p = ModelParams::init(tiny_model(), 1).unwrap();
        assert!(eval(&Dataset::new(vec![], 5, 6, Units::Meters), &p, 20.0, 16).unwrap().is_none());
        let a = eval(&ds, &p, 20.0, 16).unwrap().unwrap();
        assert_eq!(a, eval(&ds, &p, 20.0, 16).unwrap().unwrap());
        assert_eq!(a.rmse.len(), 1);
    }

    #[test]
    fn zero_offset_model_scores_anchor_distance() {
        let ds = corpus(1);
        let mut p = ModelParams::init(tiny_model(), 1).unwrap();
        p.get_mut("head.weight").unwrap().data_mut().fill(0.0);
        p.get_mut("head.bias").unwrap().data_mut().fill(0.0);
        let r = eval(&ds, &p, 20.0, 16).unwrap().unwrap();
        let (mut sum, mut count) = (0.0, 0);
        for w in &ds.windows {
            for i in 0..w.n_vehicles() {
                for k in 0..6 {
                    if w.mask.at(i, k) == 1.0 {
                        let f = &w.futures.row(i)[2 * k..2 * k + 2];
                        let a = w.last_positions.row(i);
                        sum += ((f[0] - a[0]).powi(2) + (f[1] - a[1]).powi(2)).sqrt();
                        count += 1;
                    }
                }
            }
        }
        assert!((r.ade - sum / count as f64).abs() < 1e-12);
    }

    #[test]
    fn history_csv_layout() {
        let csv = history_csv(&[EpochRecord {
            epoch: 0,
            mean_loss: 0.5,
            lr: 0.01,
        }])
        .unwrap();
        assert_eq!(csv, "epoch,mean_loss,lr\n0,5e-1,1e-2\n");
    }
}
