//! Trains on a synthetic corpus and compares against constant-velocity
//! extrapolation.
//!
//! ```text
//! cargo run --release -p edgevtp --example synthetic_training -- [scenes] [epochs] [frames]
//! ```

use std::time::Instant;

use edgevtp::data::{synthesize_corpus, Dataset, SyntheticSpec, Units, WindowConfig};
use edgevtp::metrics::MetricAccumulator;
use edgevtp::numerics::Tensor;
use edgevtp::training::{eval, fit_from};
use edgevtp::{ModelParams, TrainConfig};

fn constant_velocity_ade(ds: &Dataset) -> f64 {
    let mut acc = MetricAccumulator::new(5);
    for w in &ds.windows {
        let (n, t_in, t_out) = (w.n_vehicles(), w.t_in(), w.t_out());
        let mut pred = Vec::with_capacity(n * t_out * 2);
        for i in 0..n {
            let h = w.positions_in.row(i);
            let (last, prev) = (&h[2 * (t_in - 1)..], &h[2 * (t_in - 2)..2 * (t_in - 1)]);
            for k in 1..=t_out {
                for d in 0..2 {
                    pred.push(last[d] + k as f64 * (last[d] - prev[d]));
                }
            }
        }
        let pred = Tensor::new(vec![n, t_out, 2], pred).unwrap();
        acc.add(&pred, &w.futures, &w.mask).unwrap();
    }
    acc.ade().unwrap()
}

fn main() {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse().expect("numeric argument")).collect();
    let scenes = args.first().copied().unwrap_or(64);
    let epochs = args.get(1).copied().unwrap_or(80);
    let frames = args.get(2).copied().unwrap_or(55);
    let wc = WindowConfig {
        stride: 5,
        ..WindowConfig::default()
    };
    let spec = SyntheticSpec::default();
    let windows = synthesize_corpus(&spec, scenes, frames, &wc).unwrap();
    let ds = Dataset::new(windows, wc.t_in, wc.t_out, Units::Meters);
    println!("windows: {}  vehicles: {}", ds.len(), ds.vehicle_count());
    let defaults = TrainConfig::default();
    let cfg = TrainConfig {
        epochs,
        milestones: defaults.milestones.iter().copied().filter(|&m| m < epochs).collect(),
        ..defaults
    };
    let params = ModelParams::init(cfg.model.clone(), 1).unwrap();
    println!("parameters: {}", params.param_count());
    let start = Instant::now();
    let out = fit_from(params, &ds, &cfg, |r| {
        println!("epoch {:3}  loss {:10.4}  lr {:.0e}  {:6.1}s", r.epoch, r.mean_loss, r.lr, start.elapsed().as_secs_f64())
    })
    .unwrap();
    let report = eval(&ds, &out.params, cfg.radius, cfg.cap).unwrap().unwrap();
    let cv = constant_velocity_ade(&ds);
    println!("model ADE {:.4}  FDE {:.4}  constant-velocity ADE {:.4}  ratio {:.3}", report.ade, report.fde, cv, report.ade / cv);
}
