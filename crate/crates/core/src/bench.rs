//! Latency harness: batch-1 timing of edge construction, model forward and
//! curve reconstruction, plus density and ablation sweeps.
//!
//! The three stages of one iteration are timed back to back from shared
//! timestamps, so their durations add up to the iteration's end-to-end time.
//! Warm-up iterations run the same pipeline but are never recorded.

use std::hint::black_box;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset, SceneWindow, SyntheticSpec, WindowConfig};
use crate::edge_builder::{build_edges, edge_count_stats, EdgeMode, EdgeSet, EdgeStats, UNCAPPED};
use crate::error::{Error, Result};
use crate::metrics::{fmt, MetricReport, HORIZONS_S};
use crate::model::{Inputs, ModelParams, Predictor};
use crate::numerics::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub warmup: usize,
    pub iters: usize,
    pub radius: f64,
    pub cap: usize,
    pub precision: Precision,
    /// Worker threads inside the timed region. The pipeline is sequential,
    /// so only 1 is accepted; the value is echoed into reports.
    pub threads: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            warmup: 50,
            iters: 1000,
            radius: 20.0,
            cap: 16,
            precision: Precision::F32,
            threads: 1,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iters == 0 {
            return Err(Error::Config("at least one timed iteration is required".into()));
        }
        if self.threads != 1 {
            return Err(Error::Config(format!("the timed pipeline is single-threaded, got threads = {}", self.threads)));
        }
        if !(self.radius > 0.0) || self.cap == 0 {
            return Err(Error::Config(format!("bad edge parameters r = {}, K = {}", self.radius, self.cap)));
        }
        Ok(())
    }
}

/// The three timed stages of one prediction.
pub trait Pipeline {
    fn edge_build(&mut self) -> Result<()>;
    fn forward(&mut self) -> Result<()>;
    fn reconstruct(&mut self) -> Result<()>;
}

/// Nanoseconds spent in each stage of one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTimes {
    pub edge_build: u64,
    pub forward: u64,
    pub reconstruct: u64,
    pub e2e: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageStats {
    pub mean: f64,
    pub median: f64,
    pub p95: f64,
    pub max: f64,
}

impl StageStats {
    pub fn of(values: &[u64]) -> Self {
        let mut v = values.to_vec();
        v.sort_unstable();
        let rank = |q: f64| v[((q * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1] as f64;
        Self {
            mean: v.iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64,
            median: rank(0.5),
            p95: rank(0.95),
            max: *v.last().expect("non-empty") as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub threads: usize,
    pub precision: Precision,
    pub n_vehicles: usize,
    pub t_in: usize,
    pub t_out: usize,
    pub radius: f64,
    pub cap: usize,
    pub clock_resolution_ns: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub warmup: usize,
    pub iters: usize,
    pub samples: Vec<StageTimes>,
    pub edge_build: StageStats,
    pub forward: StageStats,
    pub reconstruct: StageStats,
    pub e2e: StageStats,
    /// `(edge_build + reconstruct) / e2e`, from the means.
    pub overhead_fraction: f64,
    pub warnings: Vec<String>,
    pub environment: Option<Environment>,
}

impl LatencyReport {
    fn from_samples(warmup: usize, samples: Vec<StageTimes>, clock_ns: u64) -> Self {
        let col = |f: fn(&StageTimes) -> u64| samples.iter().map(f).collect::<Vec<_>>();
        let edge_build = StageStats::of(&col(|s| s.edge_build));
        let forward = StageStats::of(&col(|s| s.forward));
        let reconstruct = StageStats::of(&col(|s| s.reconstruct));
        let e2e = StageStats::of(&col(|s| s.e2e));
        let overhead_fraction = if e2e.mean > 0.0 {
            ((edge_build.mean + reconstruct.mean) / e2e.mean).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let mut warnings = Vec::new();
        if clock_ns > 1_000 {
            warnings.push(format!("monotonic clock resolution is {clock_ns} ns, coarser than 1 µs"));
        }
        Self {
            warmup,
            iters: samples.len(),
            samples,
            edge_build,
            forward,
            reconstruct,
            e2e,
            overhead_fraction,
            warnings,
            environment: None,
        }
    }

    /// One row per timed iteration.
    pub fn iterations_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["iteration", "edge_build_ns", "forward_ns", "reconstruct_ns", "e2e_ns"])?;
        for (i, s) in self.samples.iter().enumerate() {
            w.write_record([i, s.edge_build as usize, s.forward as usize, s.reconstruct as usize, s.e2e as usize].map(|v| v.to_string()))?;
        }
        finish(w)
    }

    /// Per-stage statistics, preceded by `#` comment lines echoing the
    /// environment and any warnings.
    pub fn summary_csv(&self) -> Result<String> {
        let mut out = String::new();
        out.push_str("# columns: stage, mean/median/p95/max latency in nanoseconds\n");
        out.push_str(&format!("# warmup={} iters={} overhead_fraction={:.6}\n", self.warmup, self.iters, self.overhead_fraction));
        if let Some(env) = &self.environment {
            out.push_str(&format!("# environment: {}\n", serde_json::to_string(env)?));
        }
        for warning in &self.warnings {
            out.push_str(&format!("# warning: {warning}\n"));
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["stage", "mean_ns", "median_ns", "p95_ns", "max_ns"])?;
        for (name, s) in [
            ("edge_build", &self.edge_build),
            ("forward", &self.forward),
            ("reconstruct", &self.reconstruct),
            ("e2e", &self.e2e),
        ] {
            w.write_record([name.to_string(), fmt(s.mean), fmt(s.median), fmt(s.p95), fmt(s.max)])?;
        }
        out.push_str(&finish(w)?);
        Ok(out)
    }
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Smallest observable step of the monotonic clock.
pub fn clock_resolution() -> Duration {
    let mut best = Duration::MAX;
    for _ in 0..64 {
        let a = Instant::now();
        let mut b = Instant::now();
        while b == a {
            b = Instant::now();
        }
        best = best.min(b - a);
    }
    best
}

fn nanos(d: Duration) -> u64 {
    u64::try_from(d.as_nanos()).unwrap_or(u64::MAX)
}

/// Runs `warmup` untimed-for-statistics iterations followed by `iters`
/// recorded ones.
pub fn measure_pipeline<P: Pipeline>(pipeline: &mut P, warmup: usize, iters: usize) -> Result<LatencyReport> {
    let mut reports = measure_interleaved(&mut [pipeline as &mut dyn Pipeline], warmup, iters)?;
    Ok(reports.remove(0))
}

/// Like [`measure_pipeline`] for several pipelines at once: every iteration
/// runs each pipeline in turn, so slow drifts of the host affect all of them
/// alike. Returns one report per pipeline, in order.
pub fn measure_interleaved(pipelines: &mut [&mut dyn Pipeline], warmup: usize, iters: usize) -> Result<Vec<LatencyReport>> {
    if iters == 0 {
        return Err(Error::Config("at least one timed iteration is required".into()));
    }
    let clock_ns = nanos(clock_resolution());
    for _ in 0..warmup {
        for p in pipelines.iter_mut() {
            p.edge_build()?;
            p.forward()?;
            p.reconstruct()?;
        }
    }
    let mut samples = vec![Vec::with_capacity(iters); pipelines.len()];
    for _ in 0..iters {
        for (p, out) in pipelines.iter_mut().zip(&mut samples) {
            let t0 = Instant::now();
            p.edge_build()?;
            let t1 = Instant::now();
            p.forward()?;
            let t2 = Instant::now();
            p.reconstruct()?;
            let t3 = Instant::now();
            let (a, b, c) = (nanos(t1 - t0), nanos(t2 - t1), nanos(t3 - t2));
            out.push(StageTimes {
                edge_build: a,
                forward: b,
                reconstruct: c,
                e2e: a + b + c,
            });
        }
    }
    Ok(samples.into_iter().map(|s| LatencyReport::from_samples(warmup, s, clock_ns)).collect())
}

/// The model pipeline on one fixed scene at precision `F`.
pub struct ModelPipeline<'a, F: Real> {
    predictor: &'a Predictor<F>,
    window: &'a SceneWindow,
    anchors: Vec<[f64; 2]>,
    radius: f64,
    cap: usize,
    edges: Option<EdgeSet>,
    inputs: Option<Inputs<F>>,
    offsets: Option<Tensor<F>>,
    prediction: Option<Tensor<F>>,
}

impl<'a, F: Real> ModelPipeline<'a, F> {
    pub fn new(predictor: &'a Predictor<F>, window: &'a SceneWindow, radius: f64, cap: usize) -> Self {
        Self {
            predictor,
            window,
            anchors: window.last_positions.data().chunks_exact(2).map(|p| [p[0], p[1]]).collect(),
            radius,
            cap,
            edges: None,
            inputs: None,
            offsets: None,
            prediction: None,
        }
    }

    pub fn edges(&self) -> Option<&EdgeSet> {
        self.edges.as_ref()
    }

    pub fn prediction(&self) -> Option<&Tensor<F>> {
        self.prediction.as_ref()
    }
}

impl<F: Real> Pipeline for ModelPipeline<'_, F> {
    fn edge_build(&mut self) -> Result<()> {
        self.edges = Some(build_edges(black_box(&self.anchors), self.radius, self.cap, EdgeMode::Deterministic)?);
        Ok(())
    }

    fn forward(&mut self) -> Result<()> {
        let edges = self.edges.as_ref().ok_or_else(|| Error::Contract("forward before edge_build".into()))?;
        let inputs = self.predictor.inputs(black_box(self.window))?;
        self.offsets = Some(self.predictor.offsets(&inputs, edges)?);
        self.inputs = Some(inputs);
        Ok(())
    }

    fn reconstruct(&mut self) -> Result<()> {
        let (Some(inputs), Some(offsets)) = (&self.inputs, &self.offsets) else {
            return Err(Error::Contract("reconstruct before forward".into()));
        };
        self.prediction = Some(black_box(self.predictor.reconstruct(inputs, offsets)?));
        Ok(())
    }
}

fn measure_at<F: Real>(params: &ModelParams, scene: &SceneWindow, cfg: &BenchConfig) -> Result<LatencyReport> {
    let predictor = Predictor::<F>::new(params);
    let mut pipeline = ModelPipeline::new(&predictor, scene, cfg.radius, cfg.cap);
    measure_pipeline(&mut pipeline, cfg.warmup, cfg.iters)
}

/// Steady-state latency of the full pipeline on one scene.
pub fn measure(params: &ModelParams, scene: &SceneWindow, cfg: &BenchConfig) -> Result<LatencyReport> {
    cfg.validate()?;
    if scene.t_in() != params.config.t_in {
        return Err(Error::Config(format!(
            "scene has {} observed steps, model expects {}",
            scene.t_in(),
            params.config.t_in
        )));
    }
    let mut report = match cfg.precision {
        Precision::F32 => measure_at::<f32>(params, scene, cfg)?,
        Precision::F64 => measure_at::<f64>(params, scene, cfg)?,
    };
    report.environment = Some(environment(params, scene, cfg));
    Ok(report)
}

fn environment(params: &ModelParams, scene: &SceneWindow, cfg: &BenchConfig) -> Environment {
    Environment {
        threads: cfg.threads,
        precision: cfg.precision,
        n_vehicles: scene.n_vehicles(),
        t_in: params.config.t_in,
        t_out: params.config.t_out,
        radius: cfg.radius,
        cap: cfg.cap,
        clock_resolution_ns: nanos(clock_resolution()),
    }
}

/// A single synthetic scene with `n` vehicles on a road long enough to hold
/// them, observed for `t_in` steps.
pub fn density_scene(n: usize, t_in: usize, t_out: usize, seed: u64) -> Result<SceneWindow> {
    let lanes = 4;
    let spec = SyntheticSpec {
        n_vehicles: n,
        lane_count: lanes,
        road_length: (n.div_ceil(lanes) as f64 * 4.0).max(120.0),
        seed,
        ..SyntheticSpec::default()
    };
    let duration = (t_in + t_out).max(data::DEFAULT_T_IN + data::DEFAULT_T_OUT);
    let tracks = data::synthesize(&spec, duration)?;
    let wc = WindowConfig {
        t_in,
        t_out,
        stride: duration,
        ..WindowConfig::default()
    };
    data::window(&tracks, &wc, spec.units)?
        .into_iter()
        .next()
        .ok_or_else(|| Error::Contract("synthetic scene produced no window".into()))
}

/// Largest anchor-to-anchor distance plus a margin: a radius that gates
/// nothing.
pub fn covering_radius(scene: &SceneWindow) -> f64 {
    let pts: Vec<&[f64]> = scene.last_positions.data().chunks_exact(2).collect();
    let mut d: f64 = 0.0;
    for a in &pts {
        for b in &pts {
            d = d.max(((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt());
        }
    }
    d + 1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensityConfig {
    pub densities: Vec<usize>,
    pub cap: usize,
    /// Fixed interaction radius; `None` uses a radius covering each scene.
    pub radius: Option<f64>,
    pub seeds: Vec<u64>,
    pub warmup: usize,
    pub iters: usize,
    pub precision: Precision,
}

impl Default for DensityConfig {
    fn default() -> Self {
        Self {
            densities: vec![10, 25, 50, 100, 200],
            cap: 16,
            radius: None,
            seeds: vec![0],
            warmup: 50,
            iters: 200,
            precision: Precision::F32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityRow {
    pub n_vehicles: usize,
    pub seed: u64,
    pub capped: bool,
    pub cap: usize,
    pub radius: f64,
    pub edges: EdgeStats,
    pub report: LatencyReport,
}

/// For each density and seed: one capped and one uncapped measurement on
/// the same synthetic scene, interleaved iteration by iteration.
pub fn density_sweep(params: &ModelParams, cfg: &DensityConfig) -> Result<Vec<DensityRow>> {
    if !cfg.densities.windows(2).all(|w| w[0] <= w[1]) {
        return Err(Error::Config("densities must be sorted ascending".into()));
    }
    let mut rows = Vec::new();
    for &n in &cfg.densities {
        for &seed in &cfg.seeds {
            let scene = density_scene(n, params.config.t_in, params.config.t_out, seed)?;
            let radius = cfg.radius.unwrap_or_else(|| covering_radius(&scene));
            let variants = [(true, cfg.cap), (false, UNCAPPED)];
            let bench: Vec<BenchConfig> = variants
                .iter()
                .map(|&(_, cap)| BenchConfig {
                    warmup: cfg.warmup,
                    iters: cfg.iters,
                    radius,
                    cap,
                    precision: cfg.precision,
                    threads: 1,
                })
                .collect();
            let reports = match cfg.precision {
                Precision::F32 => measure_pair::<f32>(params, &scene, &bench)?,
                Precision::F64 => measure_pair::<f64>(params, &scene, &bench)?,
            };
            let anchors: Vec<[f64; 2]> = scene.last_positions.data().chunks_exact(2).map(|p| [p[0], p[1]]).collect();
            for ((&(capped, cap), b), mut report) in variants.iter().zip(&bench).zip(reports) {
                report.environment = Some(environment(params, &scene, b));
                rows.push(DensityRow {
                    n_vehicles: n,
                    seed,
                    capped,
                    cap,
                    radius,
                    edges: edge_count_stats(&build_edges(&anchors, radius, cap, EdgeMode::Deterministic)?),
                    report,
                });
            }
        }
    }
    Ok(rows)
}

fn measure_pair<F: Real>(params: &ModelParams, scene: &SceneWindow, bench: &[BenchConfig]) -> Result<Vec<LatencyReport>> {
    let predictor = Predictor::<F>::new(params);
    let mut a = ModelPipeline::new(&predictor, scene, bench[0].radius, bench[0].cap);
    let mut b = ModelPipeline::new(&predictor, scene, bench[1].radius, bench[1].cap);
    measure_interleaved(&mut [&mut a, &mut b], bench[0].warmup, bench[0].iters)
}

/// Least-squares slope of `ln(median e2e)` against `ln N` over the rows of
/// one pipeline variant.
pub fn growth_exponent(rows: &[DensityRow], capped: bool) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.capped == capped && r.n_vehicles > 0)
        .map(|r| ((r.n_vehicles as f64).ln(), r.report.e2e.median.max(1.0).ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

pub fn density_csv(rows: &[DensityRow]) -> Result<String> {
    let mut out = String::from("# columns: vehicles, scene seed, pipeline, K (empty = uncapped), radius, edge counts, latency in ns\n");
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "n_vehicles",
        "seed",
        "pipeline",
        "K",
        "radius",
        "edges_total",
        "max_list",
        "mean_list",
        "edge_build_mean_ns",
        "forward_mean_ns",
        "reconstruct_mean_ns",
        "e2e_mean_ns",
        "e2e_median_ns",
        "overhead_fraction",
    ])?;
    for r in rows {
        w.write_record([
            r.n_vehicles.to_string(),
            r.seed.to_string(),
            if r.capped { "capped" } else { "uncapped" }.to_string(),
            if r.cap == UNCAPPED { String::new() } else { r.cap.to_string() },
            fmt(r.radius),
            r.edges.total.to_string(),
            r.edges.max_list.to_string(),
            fmt(r.edges.mean_list),
            fmt(r.report.edge_build.mean),
            fmt(r.report.forward.mean),
            fmt(r.report.reconstruct.mean),
            fmt(r.report.e2e.mean),
            fmt(r.report.e2e.median),
            fmt(r.report.overhead_fraction),
        ])?;
    }
    out.push_str(&finish(w)?);
    Ok(out)
}

/// One `(r, K, residual)` configuration of an ablation sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationPoint {
    pub r: f64,
    pub k: usize,
    pub residual: bool,
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
}

/// Either a cartesian grid (`radii × caps × residual`) or explicit points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct AblationGrid {
    pub radii: Vec<f64>,
    pub caps: Vec<usize>,
    pub residual: Vec<bool>,
    pub points: Vec<AblationPoint>,
}

impl AblationGrid {
    /// Every configuration, ordered residual-off first, then by `r`, then
    /// by `K`. Position in this list plus one is the row ID.
    pub fn expand(&self) -> Vec<AblationPoint> {
        let mut pts = self.points.clone();
        for &residual in &self.residual {
            for &r in &self.radii {
                for &k in &self.caps {
                    pts.push(AblationPoint {
                        r,
                        k,
                        residual,
                        checkpoint: None,
                    });
                }
            }
        }
        pts.sort_by(|a, b| a.residual.cmp(&b.residual).then(a.r.total_cmp(&b.r)).then(a.k.cmp(&b.k)));
        pts.dedup_by(|a, b| a.residual == b.residual && a.r == b.r && a.k == b.k);
        pts
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub id: usize,
    pub point: AblationPoint,
    pub metrics: Option<MetricReport>,
    pub params: Option<usize>,
    pub e2e_ms: Option<f64>,
    pub model_ms: Option<f64>,
    pub error: Option<String>,
}

/// Evaluates and times every configuration. `load` supplies the parameters
/// for a point; its failures become error rows and the sweep continues.
pub fn ablation_sweep(
    points: &[AblationPoint],
    dataset: &Dataset,
    bench: &BenchConfig,
    mut load: impl FnMut(&AblationPoint) -> Result<ModelParams>,
) -> Vec<AblationRow> {
    let scene = dataset.windows.iter().max_by_key(|w| (w.n_vehicles(), std::cmp::Reverse(w.time_index)));
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut row = AblationRow {
                id: i + 1,
                point: p.clone(),
                metrics: None,
                params: None,
                e2e_ms: None,
                model_ms: None,
                error: None,
            };
            let result = (|| -> Result<()> {
                let params = load(p)?;
                if params.config.residual != p.residual {
                    return Err(Error::Artifact(format!(
                        "checkpoint residual = {} but the row asks for {}",
                        params.config.residual, p.residual
                    )));
                }
                row.params = Some(params.param_count());
                row.metrics = crate::training::eval(dataset, &params, p.r, p.k)?;
                if let Some(scene) = scene {
                    let cfg = BenchConfig {
                        radius: p.r,
                        cap: p.k,
                        ..bench.clone()
                    };
                    let report = measure(&params, scene, &cfg)?;
                    row.e2e_ms = Some(report.e2e.mean / 1e6);
                    row.model_ms = Some(report.forward.mean / 1e6);
                }
                Ok(())
            })();
            if let Err(e) = result {
                row.error = Some(e.to_string());
            }
            row
        })
        .collect()
}

pub const ABLATION_HEADER: [&str; 16] = [
    "ID", "r", "K", "residual", "ADE", "FDE", "RMSE1", "RMSE2", "RMSE3", "RMSE4", "RMSE5", "AVG", "params", "E2E_ms", "model_ms", "error",
];

pub fn ablation_csv(rows: &[AblationRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(ABLATION_HEADER)?;
    for r in rows {
        let mut cells = vec![
            r.id.to_string(),
            r.point.r.to_string(),
            r.point.k.to_string(),
            if r.point.residual { "Y" } else { "N" }.to_string(),
        ];
        match &r.metrics {
            Some(m) => cells.extend(m.csv_cells()),
            None => cells.extend(std::iter::repeat_n(String::new(), 3 + HORIZONS_S.len())),
        }
        cells.push(r.params.map(|p| p.to_string()).unwrap_or_default());
        cells.push(r.e2e_ms.map(fmt).unwrap_or_default());
        cells.push(r.model_ms.map(fmt).unwrap_or_default());
        cells.push(r.error.clone().unwrap_or_default());
        w.write_record(cells)?;
    }
    finish(w)
}
