use edgevtp::data::{synthesize_corpus, Dataset, SyntheticSpec, WindowConfig};
use edgevtp::encoder::Dropout;
use edgevtp::model::Inputs;
use edgevtp::numerics::Tape;
use edgevtp::training::fit;
use edgevtp::{build_edges, EdgeMode, ModelParams, TrainConfig};

fn mean_loss(data: &Dataset, params: &ModelParams) -> f64 {
    let mut total = 0.0;
    for w in &data.windows {
        let inputs = Inputs::<f64>::from_window(w, params.config.recenter).unwrap();
        let target = w.recentered(inputs.origin).futures;
        let anchors: Vec<[f64; 2]> = w.last_positions.data().chunks_exact(2).map(|p| [p[0], p[1]]).collect();
        let edges = build_edges(&anchors, 20.0, 16, EdgeMode::Deterministic).unwrap();
        let mut tape: Tape = Tape::new();
        params.bind(&mut tape).unwrap();
        let out = params.forward(&mut tape, &inputs, &edges, &mut Dropout::off()).unwrap();
        let loss = tape.masked_l2(out.samples, target, w.mask.clone()).unwrap();
        total += tape.value(loss).data()[0];
    }
    total / data.len() as f64
}

#[test]
fn overfits_thirty_two_windows_in_five_hundred_steps() {
    let spec = SyntheticSpec { seed: 21, ..SyntheticSpec::default() };
    let wc = WindowConfig { stride: 5, ..WindowConfig::default() };
    let mut windows = synthesize_corpus(&spec, 4, 55, &wc).unwrap();
    windows.truncate(32);
    let data = Dataset::new(windows, wc.t_in, wc.t_out, spec.units);
    assert_eq!(data.len(), 32);

    // 2 batches per epoch; milestones at the same fractions as 40/60/70 of 80
    let cfg = TrainConfig { epochs: 250, milestones: vec![125, 188, 219], ..TrainConfig::default() };
    let init = ModelParams::init(cfg.model.clone(), edgevtp::rng::derive_seed(cfg.seed, "init", 0)).unwrap();
    let before = mean_loss(&data, &init);
    let out = fit(&data, &cfg).unwrap();
    let after = mean_loss(&data, &out.params);
    assert!(after <= before / 100.0, "loss {before:.3} -> {after:.3}");
}
