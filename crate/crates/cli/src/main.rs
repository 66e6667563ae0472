//! `sfnet`: synthesize data, train, evaluate, export maps, benchmark the
//! attention kernel and run gradient checks.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or format
//! error, 3 numeric failure.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sfnet::attention::DEFAULT_ALPHAS;
use sfnet::backbone::{peek_precision, SfNet};
use sfnet::bench::run_bench;
use sfnet::data::{read_raster, stratified_split, synth_generate, write_raster, RasterPair};
use sfnet::gradcheck::{run_suites, GradCheckConfig};
use sfnet::train::{evaluate, export_map, train_with, Metrics};
use sfnet::{Error, Precision, Scalar};

use config::RunConfig;

/// Largest accepted deviation of the full-keep branch from dense attention.
const BENCH_TOLERANCE: f64 = 1e-6;

#[derive(Parser, Debug)]
#[command(name = "sfnet", version, about = "Sparse multi-source fusion network for hyperspectral + SAR/LiDAR classification")]
struct Cli {
    /// Seed for data generation, initialization, splits and shuffling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// standard (32-bit) or verification (64-bit).
    #[arg(long, global = true)]
    precision: Option<Precision>,
    /// JSON file with run settings; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic SFNR scene.
    Synth(SynthArgs),
    /// Train a model and write an SFNM checkpoint plus history CSV.
    Train(TrainArgs),
    /// Print test-split metrics for a checkpoint (or a freshly initialized model).
    Eval(EvalArgs),
    /// Write a P6 classification map.
    Map(MapArgs),
    /// Time sparse branches against dense attention.
    Bench(BenchArgs),
    /// Run the finite-difference gradient suites.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output SFNR file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    bands: Option<usize>,
    #[arg(long)]
    aux_channels: Option<usize>,
}

#[derive(Args, Debug)]
struct ModelFlags {
    #[arg(long)]
    patch_size: Option<usize>,
    #[arg(long)]
    pca_components: Option<usize>,
    #[arg(long)]
    token_dim: Option<usize>,
    #[arg(long)]
    stb_depth: Option<usize>,
    /// Comma-separated sparsity fractions.
    #[arg(long, value_delimiter = ',')]
    alphas: Option<Vec<f64>>,
    #[arg(long)]
    pos_embed: Option<bool>,
    #[arg(long)]
    shared_hsi_residual: Option<bool>,
}

#[derive(Args, Debug)]
struct SplitFlags {
    /// Per-class training fraction in (0, 0.9].
    #[arg(long)]
    train_fraction: Option<f64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Output SFNM checkpoint; the history goes to `<out>.history.csv`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[command(flatten)]
    split: SplitFlags,
    #[command(flatten)]
    model: ModelFlags,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint to evaluate; without it, a model is initialized from the seed.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Also write the metrics CSV here.
    #[arg(long)]
    metrics_csv: Option<PathBuf>,
    #[command(flatten)]
    split: SplitFlags,
    #[command(flatten)]
    model_flags: ModelFlags,
}

#[derive(Args, Debug)]
struct MapArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Output PPM file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Tokens per sequence.
    #[arg(long, default_value_t = 256)]
    n: usize,
    /// Token width.
    #[arg(long, default_value_t = 64)]
    d: usize,
    #[arg(long, default_value_t = 10)]
    iters: usize,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Coordinates probed per parameter tensor.
    #[arg(long)]
    max_coords: Option<usize>,
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if matches!(e.root(), Error::Config(_)) {
            1
        } else if e.is_numeric_error() {
            3
        } else {
            2
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: String) -> Failure {
    Failure { code: 1, message }
}

fn numeric(message: String) -> Failure {
    Failure { code: 3, message }
}

type CliResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> CliResult {
    let mut cfg = RunConfig::load(cli.config.as_deref()).map_err(usage)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(precision) = cli.precision {
        cfg.precision = precision;
    }
    match cli.command {
        Command::Synth(args) => synth(cfg, args),
        Command::Train(args) => {
            apply_model_flags(&mut cfg, &args.model);
            apply_split_flags(&mut cfg, &args.split);
            if let Some(e) = args.epochs {
                cfg.train.epochs = e;
            }
            if let Some(b) = args.batch_size {
                cfg.train.batch_size = b;
            }
            if let Some(lr) = args.lr {
                cfg.train.learning_rate = lr;
            }
            cfg.train.checkpoint = Some(args.out.clone());
            echo(&mut cfg);
            match cfg.precision {
                Precision::Standard => train_cmd::<f32>(&cfg, &args),
                Precision::Verification => train_cmd::<f64>(&cfg, &args),
            }
        }
        Command::Eval(args) => {
            apply_model_flags(&mut cfg, &args.model_flags);
            apply_split_flags(&mut cfg, &args.split);
            let precision = match &args.model {
                Some(path) => checkpoint_precision(path)?,
                None => cfg.precision,
            };
            cfg.precision = precision;
            match precision {
                Precision::Standard => eval_cmd::<f32>(cfg, &args),
                Precision::Verification => eval_cmd::<f64>(cfg, &args),
            }
        }
        Command::Map(args) => {
            cfg.precision = checkpoint_precision(&args.model)?;
            match cfg.precision {
                Precision::Standard => map_cmd::<f32>(cfg, &args),
                Precision::Verification => map_cmd::<f64>(cfg, &args),
            }
        }
        Command::Bench(args) => {
            echo(&mut cfg);
            match cfg.precision {
                Precision::Standard => bench_cmd::<f32>(&cfg, &args),
                Precision::Verification => bench_cmd::<f64>(&cfg, &args),
            }
        }
        Command::Gradcheck(args) => {
            echo(&mut cfg);
            gradcheck_cmd(&cfg, &args)
        }
    }
}

fn apply_model_flags(cfg: &mut RunConfig, flags: &ModelFlags) {
    let m = &mut cfg.model;
    if let Some(v) = flags.patch_size {
        m.patch_size = v;
    }
    if let Some(v) = flags.pca_components {
        m.pca_components = v;
    }
    if let Some(v) = flags.token_dim {
        m.token_dim = v;
    }
    if let Some(v) = flags.stb_depth {
        m.stb_depth = v;
    }
    if let Some(v) = &flags.alphas {
        m.alphas = v.clone();
    }
    if let Some(v) = flags.pos_embed {
        m.pos_embed = v;
    }
    if let Some(v) = flags.shared_hsi_residual {
        m.shared_hsi_residual = v;
    }
}

fn apply_split_flags(cfg: &mut RunConfig, flags: &SplitFlags) {
    if let Some(f) = flags.train_fraction {
        cfg.train_fraction = f;
    }
}

fn echo(cfg: &mut RunConfig) {
    cfg.sync();
    println!("{}", cfg.to_json());
}

fn with_path(path: &Path) -> impl Fn(Error) -> Failure + '_ {
    move |e| {
        let mut f = Failure::from(e);
        f.message = format!("{}: {}", path.display(), f.message);
        f
    }
}

fn checkpoint_precision(path: &Path) -> CliResult<Precision> {
    let bytes = fs::read(path).map_err(|e| with_path(path)(e.into()))?;
    peek_precision(&bytes).map_err(with_path(path))
}

fn load_raster(path: &Path) -> CliResult<RasterPair> {
    read_raster(path).map_err(with_path(path))
}

fn load_model<T: Scalar>(path: &Path) -> CliResult<SfNet<T>> {
    SfNet::<T>::load(path).map_err(with_path(path))
}

fn synth(mut cfg: RunConfig, args: SynthArgs) -> CliResult {
    let s = &mut cfg.synth;
    if let Some(v) = args.classes {
        s.n_classes = v;
    }
    if let Some(v) = args.height {
        s.height = v;
    }
    if let Some(v) = args.width {
        s.width = v;
    }
    if let Some(v) = args.bands {
        s.bands = v;
    }
    if let Some(v) = args.aux_channels {
        s.aux_channels = v;
    }
    echo(&mut cfg);
    let raster = synth_generate(&cfg.synth)?;
    write_raster(&args.out, &raster)?;
    println!(
        "wrote {} ({}x{}, {} bands, {} aux channels, {} classes)",
        args.out.display(),
        raster.height(),
        raster.width(),
        raster.bands(),
        raster.aux_channels(),
        raster.n_classes()
    );
    Ok(())
}

fn print_metrics(metrics: &Metrics, raster: &RasterPair) {
    print!("{}", metrics.report(raster.class_names()));
    println!("{}", serde_json::to_string(metrics).expect("serializable metrics"));
}

fn train_cmd<T: Scalar>(cfg: &RunConfig, args: &TrainArgs) -> CliResult {
    let raster = load_raster(&args.data)?;
    let split = stratified_split(raster.labels(), raster.n_classes(), cfg.train_fraction, cfg.seed)?;
    let mut model = SfNet::<T>::for_raster(cfg.model.clone(), &raster)?;
    let history = train_with(&mut model, &raster, &split, &cfg.train, |r| {
        println!("epoch {} loss {:.6} train_acc {:.4}", r.epoch, r.loss, r.train_accuracy);
    })?;
    let history_path = PathBuf::from(format!("{}.history.csv", args.out.display()));
    fs::write(&history_path, history.to_csv()).map_err(Error::from)?;
    println!("wrote {} and {}", args.out.display(), history_path.display());
    let metrics = evaluate(&model, &raster, &split.test)?;
    print_metrics(&metrics, &raster);
    Ok(())
}

fn eval_cmd<T: Scalar>(mut cfg: RunConfig, args: &EvalArgs) -> CliResult {
    let raster = load_raster(&args.data)?;
    let model = match &args.model {
        Some(path) => load_model::<T>(path)?,
        None => {
            cfg.sync();
            SfNet::<T>::for_raster(cfg.model.clone(), &raster)?
        }
    };
    cfg.sync();
    cfg.model = model.config().clone();
    println!("{}", cfg.to_json());
    let split = stratified_split(raster.labels(), raster.n_classes(), cfg.train_fraction, cfg.seed)?;
    if model.config().n_classes != raster.n_classes() {
        return Err(Error::InvalidData(format!(
            "model has {} classes, data has {}",
            model.config().n_classes,
            raster.n_classes()
        ))
        .into());
    }
    let metrics = evaluate(&model, &raster, &split.test)?;
    print_metrics(&metrics, &raster);
    if let Some(path) = &args.metrics_csv {
        fs::write(path, metrics.to_csv(raster.class_names())).map_err(Error::from)?;
    }
    Ok(())
}

fn map_cmd<T: Scalar>(mut cfg: RunConfig, args: &MapArgs) -> CliResult {
    let raster = load_raster(&args.data)?;
    let model = load_model::<T>(&args.model)?;
    cfg.sync();
    cfg.model = model.config().clone();
    println!("{}", cfg.to_json());
    export_map(&model, &raster, &args.out)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn bench_cmd<T: Scalar>(cfg: &RunConfig, args: &BenchArgs) -> CliResult {
    let mut alphas = DEFAULT_ALPHAS.to_vec();
    alphas.push(1.0);
    let r = run_bench::<T>(args.n, args.d, args.iters, &alphas, cfg.seed)?;
    println!("n {} d {} iters {} (median of runs after warmup)", r.n, r.d, r.iters);
    println!("dense: {:.4} ms", r.dense_median_ms);
    for b in &r.branches {
        println!("branch alpha {:.4} k {}: {:.4} ms", b.alpha, b.k, b.median_ms);
    }
    println!("max deviation alpha=1 vs dense: {:e}", r.max_deviation);
    if !(r.max_deviation < BENCH_TOLERANCE) {
        return Err(numeric(format!(
            "alpha=1 branch deviates from dense attention by {:e}",
            r.max_deviation
        )));
    }
    Ok(())
}

fn gradcheck_cmd(cfg: &RunConfig, args: &GradcheckArgs) -> CliResult {
    let mut gc = GradCheckConfig::default();
    if let Some(m) = args.max_coords {
        if m == 0 {
            return Err(usage("--max-coords must be positive".into()));
        }
        gc.max_coords = m;
    }
    let reports = run_suites(cfg.seed, &gc)?;
    let mut worst: f64 = 0.0;
    for r in &reports {
        println!(
            "{:<16} {} checked {:>5} skipped {:>3} worst {:.3e} at {}",
            r.suite,
            if r.passed { "pass" } else { "FAIL" },
            r.checked,
            r.skipped,
            r.worst_rel_error,
            r.worst_at
        );
        worst = worst.max(r.worst_rel_error);
    }
    println!("worst relative error: {worst:.3e} (tolerance {:.0e})", gc.tolerance);
    if reports.iter().any(|r| !r.passed) {
        return Err(numeric("gradient check failed".into()));
    }
    Ok(())
}
