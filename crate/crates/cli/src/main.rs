//! `edgevtp`: synthesize or ingest data, train, evaluate, benchmark and sweep.
//!
//! Exit codes: 0 success, 2 configuration error, 3 training divergence,
//! 4 artifact mismatch.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use edgevtp::bench::{self, AblationGrid, BenchConfig, DensityConfig, Precision};
use edgevtp::data::{self, Dataset, IngestConfig, SceneWindow, SyntheticSpec, WindowConfig};
use edgevtp::training::{self, TrainConfig};
use edgevtp::{Error, ModelParams, UNCAPPED};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

const REPORT_DIR_ENV: &str = "EDGEVTP_REPORT_DIR";

#[derive(Parser)]
#[command(name = "edgevtp", version, about = "Bounded-latency vehicle trajectory prediction")]
struct Cli {
    /// Directory for CSV reports. Overrides $EDGEVTP_REPORT_DIR; defaults to
    /// the current directory.
    #[arg(long, global = true)]
    report_dir: Option<PathBuf>,

    /// Print progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic highway dataset.
    Synth(SynthArgs),
    /// Convert a trajectory CSV into a dataset.
    Ingest(IngestArgs),
    /// Train a model and write a checkpoint plus its loss history.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Measure end-to-end latency on one scene.
    Bench(BenchArgs),
    /// Evaluate and time a grid of (r, K, residual) configurations.
    Sweep(SweepArgs),
    /// Latency versus vehicle count, capped and uncapped.
    Density(DensityArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Synthetic scene spec (JSON); omitted fields take defaults.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    scenes: usize,
    /// Frames simulated per scene.
    #[arg(long, default_value_t = 60)]
    frames: usize,
    #[arg(long, default_value_t = data::DEFAULT_T_IN)]
    t_in: usize,
    #[arg(long, default_value_t = data::DEFAULT_T_OUT)]
    t_out: usize,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Overrides the spec's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    csv: PathBuf,
    /// Ingestion config (JSON): columns, source_hz, unit_scale, t_in, t_out, stride.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Rate the tracks are resampled to.
    #[arg(long, default_value_t = data::DEFAULT_RATE_HZ)]
    target_hz: u32,
    /// Units of the scaled coordinates: `meters` or `pixels`.
    #[arg(long, default_value = "meters")]
    units: String,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Training config (JSON); flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// Loss history CSV; defaults to `loss_history.csv` in the report directory.
    #[arg(long)]
    history: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    wd: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    milestones: Option<Vec<usize>>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    r: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    residual: Option<bool>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Defaults to the radius recorded in the checkpoint's training config.
    #[arg(long)]
    r: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    /// Defaults to `metrics.csv` in the report directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Take the scene from this dataset (the window with most vehicles)...
    #[arg(long, conflicts_with = "vehicles")]
    data: Option<PathBuf>,
    /// ...or synthesize one with this many vehicles.
    #[arg(long)]
    vehicles: Option<usize>,
    #[arg(long, default_value_t = 0)]
    scene_seed: u64,
    /// Bench config (JSON); flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    r: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    /// `f32` or `f64`.
    #[arg(long)]
    precision: Option<String>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep file (JSON): `{dataset, grid, bench, train}`.
    #[arg(long)]
    grid: PathBuf,
    /// Defaults to `sweep.csv` in the report directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DensityArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Density config (JSON); flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    densities: Option<Vec<usize>>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    /// Defaults to `density.csv` in the report directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Contents of a `sweep --grid` file.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepFile {
    dataset: PathBuf,
    grid: AblationGrid,
    #[serde(default)]
    bench: BenchConfig,
    /// Used to train a model for every point that names no checkpoint.
    #[serde(default)]
    train: Option<TrainConfig>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Divergence { .. } => 3,
        Error::Artifact(_) | Error::Dimension { .. } | Error::Contract(_) | Error::UndefinedMetric { .. } => 4,
        Error::Config(_) | Error::Parse { .. } | Error::Io(_) | Error::Json(_) | Error::Csv(_) => 2,
    }
}

struct Ctx {
    report_dir: PathBuf,
    verbose: bool,
}

impl Ctx {
    fn report_path(&self, explicit: Option<PathBuf>, default_name: &str) -> edgevtp::Result<PathBuf> {
        let path = explicit.unwrap_or_else(|| self.report_dir.join(default_name));
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        Ok(path)
    }

    fn log(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("{}", msg.as_ref());
        }
    }
}

fn parse_json<T: DeserializeOwned>(path: &Path) -> edgevtp::Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn read_json<T: DeserializeOwned + Default>(path: Option<&Path>) -> edgevtp::Result<T> {
    path.map_or_else(|| Ok(T::default()), parse_json)
}

fn require_file(path: &Path) -> edgevtp::Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!("{} does not exist", path.display())))
    }
}

/// Writes `body` after a `# config:` line echoing the effective configuration.
fn write_report(path: &Path, config: &Value, body: &str) -> edgevtp::Result<()> {
    fs::write(path, format!("# config: {config}\n{body}"))?;
    Ok(())
}

fn load_dataset(path: &Path) -> edgevtp::Result<Dataset> {
    require_file(path)?;
    Dataset::load(path)
}

fn load_checkpoint(path: &Path) -> edgevtp::Result<(ModelParams, Value)> {
    require_file(path)?;
    let c = edgevtp::container::Container::read(path)?;
    let config = c.config.clone();
    Ok((ModelParams::from_container(c)?, config))
}

fn trained_edges(config: &Value) -> (f64, usize) {
    let defaults = TrainConfig::default();
    let r = config.get("radius").and_then(Value::as_f64).unwrap_or(defaults.radius);
    let k = config.get("cap").and_then(Value::as_u64).map_or(defaults.cap, |k| k as usize);
    (r, k)
}

fn summarize(ds: &Dataset) -> String {
    let vehicles = ds.vehicle_count();
    let density = if ds.is_empty() { 0.0 } else { vehicles as f64 / ds.len() as f64 };
    format!("windows {}  vehicle slots {vehicles}  mean vehicles per window {density:.2}", ds.len())
}

fn synth(ctx: &Ctx, a: SynthArgs) -> edgevtp::Result<()> {
    let mut spec: SyntheticSpec = read_json(a.spec.as_deref())?;
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    spec.validate()?;
    let wc = WindowConfig {
        t_in: a.t_in,
        t_out: a.t_out,
        stride: a.stride,
        ..WindowConfig::default()
    };
    ctx.log(format!("synthesizing {} scenes of {} frames", a.scenes, a.frames));
    let windows = data::synthesize_corpus(&spec, a.scenes, a.frames, &wc)?;
    let mut ds = Dataset::new(windows, wc.t_in, wc.t_out, spec.units);
    ds.config = json!({ "spec": spec, "scenes": a.scenes, "frames": a.frames, "window": wc });
    ds.save(&a.out)?;
    println!("{}", summarize(&ds));
    Ok(())
}

fn ingest(ctx: &Ctx, a: IngestArgs) -> edgevtp::Result<()> {
    require_file(&a.csv)?;
    let cfg: IngestConfig = read_json(a.config.as_deref())?;
    let units: data::Units = serde_json::from_value(Value::String(a.units.to_ascii_lowercase()))
        .map_err(|_| Error::Config(format!("units must be meters or pixels, got {:?}", a.units)))?;
    let points = data::parse_trajectory_csv(&a.csv, &cfg.columns, cfg.unit_scale)?;
    ctx.log(format!("read {} track points", points.len()));
    let points = data::resample(&points, cfg.source_hz, a.target_hz)?;
    let wc = WindowConfig {
        t_in: cfg.t_in,
        t_out: cfg.t_out,
        stride: cfg.stride,
        ..WindowConfig::default()
    };
    let mut ds = Dataset::new(data::window(&points, &wc, units)?, wc.t_in, wc.t_out, units);
    ds.config = json!({ "ingest": cfg, "target_hz": a.target_hz, "source": a.csv });
    ds.save(&a.out)?;
    println!("{}", summarize(&ds));
    Ok(())
}

fn train_config(a: &TrainArgs) -> edgevtp::Result<TrainConfig> {
    let mut cfg: TrainConfig = read_json(a.config.as_deref())?;
    macro_rules! apply {
        ($($flag:ident => $($field:ident).+),* $(,)?) => {
            $(if let Some(v) = a.$flag.clone() { cfg.$($field).+ = v; })*
        };
    }
    apply!(
        epochs => epochs, lr => lr, wd => weight_decay, milestones => milestones, gamma => gamma,
        batch => batch_size, dropout => model.dropout, r => radius, k => cap,
        residual => model.residual, seed => seed, checkpoint_every => checkpoint_every,
    );
    if a.checkpoint_dir.is_some() {
        cfg.checkpoint_dir = a.checkpoint_dir.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train(ctx: &Ctx, a: TrainArgs) -> edgevtp::Result<()> {
    let cfg = train_config(&a)?;
    let ds = load_dataset(&a.data)?;
    if ds.t_in != cfg.model.t_in || ds.t_out != cfg.model.t_out {
        return Err(Error::Artifact(format!(
            "dataset windows are {}→{} steps, model expects {}→{}",
            ds.t_in, ds.t_out, cfg.model.t_in, cfg.model.t_out
        )));
    }
    let params = ModelParams::init(cfg.model.clone(), edgevtp::rng::derive_seed(cfg.seed, "init", 0))?;
    ctx.log(format!("{} parameters, {} windows", params.param_count(), ds.len()));
    let out = training::fit_from(params, &ds, &cfg, |r| {
        ctx.log(format!("epoch {:3}  loss {:.6}  lr {:e}", r.epoch, r.mean_loss, r.lr))
    })?;
    let echo = serde_json::to_value(&cfg)?;
    out.params.save(&a.out, cfg.seed, echo.clone())?;
    let history = ctx.report_path(a.history, "loss_history.csv")?;
    write_report(&history, &echo, &training::history_csv(&out.history)?)?;
    match out.history.last() {
        Some(r) => println!("trained {} epochs, final loss {:.6}", out.history.len(), r.mean_loss),
        None => println!("wrote initialized weights (0 epochs)"),
    }
    Ok(())
}

fn eval(ctx: &Ctx, a: EvalArgs) -> edgevtp::Result<()> {
    let (params, trained) = load_checkpoint(&a.checkpoint)?;
    let ds = load_dataset(&a.data)?;
    if ds.is_empty() {
        return Err(Error::Artifact(format!("{} has no windows", a.data.display())));
    }
    if ds.t_in != params.config.t_in || ds.t_out != params.config.t_out {
        return Err(Error::Artifact(format!(
            "dataset windows are {}→{} steps, checkpoint expects {}→{}",
            ds.t_in, ds.t_out, params.config.t_in, params.config.t_out
        )));
    }
    let (r0, k0) = trained_edges(&trained);
    let (r, k) = (a.r.unwrap_or(r0), a.k.unwrap_or(k0));
    let report = training::eval(&ds, &params, r, k)?.ok_or_else(|| Error::Artifact("no windows".into()))?;
    let path = ctx.report_path(a.out, "metrics.csv")?;
    let echo = json!({ "checkpoint": a.checkpoint, "data": a.data, "radius": r, "cap": k, "model": params.config });
    write_report(&path, &echo, &report.to_csv()?)?;
    println!("ADE {:.4}  FDE {:.4}  avg RMSE {:.4}", report.ade, report.fde, report.avg_rmse);
    Ok(())
}

fn bench_scene(a: &BenchArgs, params: &ModelParams) -> edgevtp::Result<SceneWindow> {
    if let Some(path) = &a.data {
        let ds = load_dataset(path)?;
        return ds
            .windows
            .into_iter()
            .max_by_key(|w| (w.n_vehicles(), std::cmp::Reverse(w.time_index)))
            .ok_or_else(|| Error::Artifact(format!("{} has no windows", path.display())));
    }
    bench::density_scene(a.vehicles.unwrap_or(20), params.config.t_in, params.config.t_out, a.scene_seed)
}

fn parse_precision(s: &str) -> edgevtp::Result<Precision> {
    serde_json::from_value(Value::String(s.to_ascii_lowercase()))
        .map_err(|_| Error::Config(format!("precision must be f32 or f64, got {s:?}")))
}

fn bench_cmd(ctx: &Ctx, a: BenchArgs) -> edgevtp::Result<()> {
    let mut cfg: BenchConfig = read_json(a.config.as_deref())?;
    let (params, trained) = load_checkpoint(&a.checkpoint)?;
    if a.config.is_none() {
        (cfg.radius, cfg.cap) = trained_edges(&trained);
    }
    if let Some(v) = a.warmup {
        cfg.warmup = v;
    }
    if let Some(v) = a.iters {
        cfg.iters = v;
    }
    if let Some(v) = a.r {
        cfg.radius = v;
    }
    if let Some(v) = a.k {
        cfg.cap = v;
    }
    if let Some(v) = &a.precision {
        cfg.precision = parse_precision(v)?;
    }
    if let Some(v) = a.threads {
        cfg.threads = v;
    }
    cfg.validate()?;
    let scene = bench_scene(&a, &params)?;
    ctx.log(format!("timing {} vehicles, {} warm-up + {} iterations", scene.n_vehicles(), cfg.warmup, cfg.iters));
    let report = bench::measure(&params, &scene, &cfg)?;
    let echo = json!({ "checkpoint": a.checkpoint, "bench": cfg, "n_vehicles": scene.n_vehicles() });
    write_report(&ctx.report_path(None, "bench_summary.csv")?, &echo, &report.summary_csv()?)?;
    write_report(&ctx.report_path(None, "bench_iterations.csv")?, &echo, &report.iterations_csv()?)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "e2e mean {:.3} ms  median {:.3} ms  p95 {:.3} ms  overhead {:.1}%",
        report.e2e.mean / 1e6,
        report.e2e.median / 1e6,
        report.e2e.p95 / 1e6,
        100.0 * report.overhead_fraction
    );
    Ok(())
}

fn sweep(ctx: &Ctx, a: SweepArgs) -> edgevtp::Result<()> {
    require_file(&a.grid)?;
    let file: SweepFile = parse_json(&a.grid)?;
    let base = a.grid.parent().unwrap_or(Path::new(""));
    let ds = load_dataset(&base.join(&file.dataset))?;
    let points = file.grid.expand();
    if points.is_empty() {
        return Err(Error::Config("the sweep grid is empty".into()));
    }
    file.bench.validate()?;
    let rows = bench::ablation_sweep(&points, &ds, &file.bench, |p| {
        ctx.log(format!("r {} K {} residual {}", p.r, p.k, p.residual));
        match (&p.checkpoint, &file.train) {
            (Some(path), _) => load_checkpoint(&base.join(path)).map(|(params, _)| params),
            (None, Some(train)) => {
                let mut cfg = train.clone();
                cfg.radius = p.r;
                cfg.cap = p.k;
                cfg.model.residual = p.residual;
                training::fit(&ds, &cfg).map(|o| o.params)
            }
            (None, None) => Err(Error::Config("point has no checkpoint and the sweep file has no train config".into())),
        }
    });
    let path = ctx.report_path(a.out, "sweep.csv")?;
    write_report(&path, &serde_json::to_value(&file)?, &bench::ablation_csv(&rows)?)?;
    let failed: Vec<_> = rows.iter().filter_map(|r| r.error.as_ref().map(|e| (r.id, e))).collect();
    println!("{} rows written to {}", rows.len(), path.display());
    for (id, e) in &failed {
        eprintln!("row {id}: {e}");
    }
    if failed.len() == rows.len() {
        return Err(Error::Artifact("every sweep row failed".into()));
    }
    Ok(())
}

fn density(ctx: &Ctx, a: DensityArgs) -> edgevtp::Result<()> {
    let mut cfg: DensityConfig = read_json(a.config.as_deref())?;
    if let Some(v) = a.densities {
        cfg.densities = v;
    }
    if let Some(v) = a.k {
        cfg.cap = v;
    }
    if let Some(v) = a.warmup {
        cfg.warmup = v;
    }
    if let Some(v) = a.iters {
        cfg.iters = v;
    }
    let (params, _) = load_checkpoint(&a.checkpoint)?;
    let rows = bench::density_sweep(&params, &cfg)?;
    let path = ctx.report_path(a.out, "density.csv")?;
    write_report(&path, &json!({ "checkpoint": a.checkpoint, "density": cfg }), &bench::density_csv(&rows)?)?;
    for r in &rows {
        let k = if r.cap == UNCAPPED { "inf".to_string() } else { r.cap.to_string() };
        println!(
            "N {:4}  K {k:>3}  edges {:6}  e2e median {:.3} ms",
            r.n_vehicles,
            r.edges.total,
            r.report.e2e.median / 1e6
        );
    }
    if let (Some(c), Some(u)) = (bench::growth_exponent(&rows, true), bench::growth_exponent(&rows, false)) {
        println!("growth exponent: capped {c:.3}, uncapped {u:.3}");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let report_dir = cli
        .report_dir
        .or_else(|| std::env::var_os(REPORT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    let ctx = Ctx {
        report_dir,
        verbose: cli.verbose,
    };
    let result = match cli.command {
        Command::Synth(a) => synth(&ctx, a),
        Command::Ingest(a) => ingest(&ctx, a),
        Command::Train(a) => train(&ctx, a),
        Command::Eval(a) => eval(&ctx, a),
        Command::Bench(a) => bench_cmd(&ctx, a),
        Command::Sweep(a) => sweep(&ctx, a),
        Command::Density(a) => density(&ctx, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
