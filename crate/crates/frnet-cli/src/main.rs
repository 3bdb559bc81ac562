//! Command-line frontend: self-verification, cost accounting, benchmarks,
//! synthetic data generation, training, evaluation, and inference.
//!
//! Exit codes: 0 success, 1 verification or budget assertion failure,
//! 2 usage or input errors.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use frnet::data::{self, AngleRange};
use frnet::metrics::{mean_angular_error, GazeAngles};
use frnet::nn::checkpoint::{load_checkpoint, save_checkpoint};
use frnet::nn::{FrNet, ModelConfig};
use frnet::profile;
use frnet::tensor::read_tensor;
use frnet::train::{train_loop, Schedule, TrainOptions};
use frnet::verify;

#[derive(Parser)]
#[command(name = "frnet", version, about = "FFT residual network for gaze estimation")]
struct Cli {
    /// Worker threads. Compute is single threaded for exact reproducibility;
    /// values above 1 are reduced to 1 with a warning.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run self-verification suites against independent oracles.
    Verify(VerifyArgs),
    /// Per-layer parameter and FLOP breakdown.
    Count(CountArgs),
    /// Timing benchmarks: spectral vs direct convolution scaling, and
    /// single-image inference latency.
    Bench(BenchArgs),
    /// Generate a synthetic gaze dataset.
    GenData(GenDataArgs),
    /// Train a model on a synthetic dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset (mean angular error, degrees).
    Eval(EvalArgs),
    /// Run one image through a checkpoint.
    Infer(InferArgs),
}

#[derive(Args)]
struct VerifyArgs {
    /// Run a single suite: fft, conv, grad, or metrics. Default: all.
    #[arg(long)]
    suite: Option<String>,
    /// Deliberately perturb the named gradient rule (e.g. grad.conv2d) to
    /// demonstrate the checks catch a broken backward pass.
    #[arg(long)]
    inject_fault: Option<String>,
}

#[derive(Args)]
struct CountArgs {
    /// Model configuration TOML; default is the full-size architecture.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Exit 1 unless the model is inside the parameter and FLOP budgets.
    #[arg(long)]
    assert_budget: bool,
    /// Disable a component (repeatable): fft_residual_block, fft_encoder,
    /// concat_shortcut, encoder_shortcut.
    #[arg(long)]
    ablate: Vec<String>,
}

#[derive(Args)]
struct BenchArgs {
    /// Image sizes for the convolution scaling table.
    #[arg(long, value_delimiter = ',', default_values_t = vec![8usize, 16, 32, 64])]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Skip the full-model inference latency measurement.
    #[arg(long)]
    no_model: bool,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 512)]
    n: usize,
    /// Image side length; power of two >= 32.
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory (containing manifest.toml) or a manifest path.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for checkpoint.frck and train_log.csv.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4e-4)]
    lr: f64,
    #[arg(long, default_value_t = 4e-5)]
    decayed_lr: f64,
    /// Epoch (zero-based) at which the learning rate drops.
    #[arg(long, default_value_t = 10)]
    decay_epoch: usize,
    /// Model configuration TOML. Default: the reduced preset, with
    /// input_size taken from the dataset.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Image as a tensor record file, shape [3, s, s].
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    json: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be >= 1");
            return ExitCode::from(2);
        }
        if t > 1 {
            eprintln!("warning: compute is single threaded for reproducibility; using 1 thread");
        }
    }
    let result = match cli.cmd {
        Cmd::Verify(args) => cmd_verify(args),
        Cmd::Count(args) => cmd_count(args),
        Cmd::Bench(args) => cmd_bench(args),
        Cmd::GenData(args) => cmd_gen_data(args),
        Cmd::Train(args) => cmd_train(args),
        Cmd::Eval(args) => cmd_eval(args),
        Cmd::Infer(args) => cmd_infer(args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn cmd_verify(args: VerifyArgs) -> Result<u8> {
    let fault = args.inject_fault.as_deref();
    let results = match args.suite.as_deref() {
        Some(suite) => verify::run_suite(suite, fault)
            .with_context(|| format!("suite '{suite}'"))?,
        None => verify::run_all(fault).context("verification")?,
    };
    let mut failed = 0;
    for r in &results {
        let status = if r.passed { "PASS" } else { "FAIL" };
        println!("{status} {:<42} {}", r.name, r.detail);
        if !r.passed {
            failed += 1;
        }
    }
    println!("{} cases, {} failed", results.len(), failed);
    Ok(if failed == 0 { 0 } else { 1 })
}

fn load_config(path: Option<&Path>) -> Result<ModelConfig> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            let config: ModelConfig =
                toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?;
            Ok(config)
        }
        None => Ok(ModelConfig::default()),
    }
}

fn cmd_count(args: CountArgs) -> Result<u8> {
    let mut config = load_config(args.config.as_deref())?;
    for name in &args.ablate {
        match name.as_str() {
            "fft_residual_block" => config.ablation.disable_fft_residual_block = true,
            "fft_encoder" => config.ablation.disable_fft_encoder = true,
            "concat_shortcut" => config.ablation.disable_concat_shortcut = true,
            "encoder_shortcut" => config.ablation.disable_encoder_shortcut = true,
            other => bail!(
                "unknown ablation '{other}'; expected fft_residual_block, fft_encoder, \
                 concat_shortcut, or encoder_shortcut"
            ),
        }
    }
    let model = FrNet::new(config, 0).context("building model")?;
    let report = profile::cost_report(&model);
    print!("{}", report.table());
    println!(
        "total: {} parameters ({:.3}M), {} flops ({:.3}G)",
        report.total_params,
        report.total_params as f64 / 1e6,
        report.total_flops,
        report.total_flops as f64 / 1e9
    );
    if args.assert_budget {
        let (lo, hi) = profile::param_budget_range();
        let params_ok = (lo..=hi).contains(&report.total_params);
        let flops_ok =
            (profile::FLOP_MIN..=profile::FLOP_MAX).contains(&report.total_flops);
        println!(
            "budget: params {}..={} -> {}, flops {}..={} -> {}",
            lo,
            hi,
            if params_ok { "PASS" } else { "FAIL" },
            profile::FLOP_MIN,
            profile::FLOP_MAX,
            if flops_ok { "PASS" } else { "FAIL" }
        );
        if !(params_ok && flops_ok) {
            return Ok(1);
        }
    }
    Ok(0)
}

fn cmd_bench(args: BenchArgs) -> Result<u8> {
    println!("hardware: {}", profile::hardware_descriptor());
    let rows = profile::bench_scaling(&args.sizes, args.repeats, args.seed)
        .context("convolution scaling benchmark")?;
    println!(
        "{:>6} {:>14} {:>14} {:>8}",
        "n", "spectral (s)", "direct (s)", "ratio"
    );
    for r in &rows {
        println!(
            "{:>6} {:>14.6} {:>14.6} {:>8.2}",
            r.n,
            r.spectral_secs,
            r.direct_secs,
            r.direct_secs / r.spectral_secs
        );
    }
    if !args.no_model {
        let model = FrNet::new(ModelConfig::default(), 0)?;
        let bench = profile::bench_inference(&model, args.repeats)?;
        println!(
            "inference: {:.1} ms median over {} runs",
            bench.median_ms, bench.repeats
        );
    }
    Ok(0)
}

fn cmd_gen_data(args: GenDataArgs) -> Result<u8> {
    let manifest = data::generate_dataset(
        args.n,
        args.size,
        args.seed,
        AngleRange::default(),
        &args.out,
    )
    .context("generating dataset")?;
    println!(
        "wrote {} samples of {}x{} to {}",
        manifest.count,
        manifest.image_size,
        manifest.image_size,
        args.out.display()
    );
    Ok(0)
}

fn manifest_path(data: &Path) -> PathBuf {
    if data.is_dir() {
        data.join("manifest.toml")
    } else {
        data.to_path_buf()
    }
}

fn load_samples(path: &Path) -> Result<(data::DatasetManifest, Vec<data::SyntheticSample>)> {
    let manifest = data::read_manifest(manifest_path(path)).context("reading manifest")?;
    let samples = data::load_dataset(&manifest).context("loading dataset")?;
    Ok((manifest, samples))
}

fn cmd_train(args: TrainArgs) -> Result<u8> {
    let (manifest, samples) = load_samples(&args.data)?;
    let config = match args.config.as_deref() {
        Some(p) => load_config(Some(p))?,
        None => {
            let mut c = ModelConfig::small();
            c.input_size = manifest.image_size;
            c
        }
    };
    if config.input_size != manifest.image_size {
        bail!(
            "model input_size {} does not match dataset image size {}",
            config.input_size,
            manifest.image_size
        );
    }
    let mut model = FrNet::new(config, args.seed).context("building model")?;
    let opts = TrainOptions {
        epochs: args.epochs,
        batch_size: args.batch_size,
        seed: args.seed,
        schedule: Schedule {
            base_lr: args.lr,
            decayed_lr: args.decayed_lr,
            decay_epoch: args.decay_epoch,
        },
        out_dir: Some(args.out.clone()),
        verbose: true,
        ..TrainOptions::default()
    };
    let log = train_loop(&mut model, &samples, &opts).context("training")?;
    save_checkpoint(args.out.join("checkpoint.frck"), &model)?;
    if let Some(last) = log.epochs.last() {
        println!(
            "done: {} epochs, final loss {:.6}, final angular error {:.3} deg",
            log.epochs.len(),
            last.mean_loss,
            last.mean_angular_error_deg
        );
    }
    println!("checkpoint: {}", args.out.join("checkpoint.frck").display());
    println!("log: {}", args.out.join("train_log.csv").display());
    Ok(0)
}

fn cmd_eval(args: EvalArgs) -> Result<u8> {
    let model = load_checkpoint(&args.checkpoint)
        .with_context(|| format!("loading checkpoint {}", args.checkpoint.display()))?;
    let (manifest, samples) = load_samples(&args.data)?;
    if model.config.input_size != manifest.image_size {
        bail!(
            "checkpoint expects {}x{} input, dataset is {}x{}",
            model.config.input_size,
            model.config.input_size,
            manifest.image_size,
            manifest.image_size
        );
    }
    let mut preds = Vec::with_capacity(samples.len());
    let mut truths = Vec::with_capacity(samples.len());
    for s in &samples {
        let out = model.infer(&s.image)?;
        preds.push(GazeAngles {
            yaw: out.data()[0],
            pitch: out.data()[1],
        });
        truths.push(s.label);
    }
    let err = mean_angular_error(&preds, &truths)?;
    if args.json {
        println!(
            "{}",
            serde_json::json!({
                "samples": samples.len(),
                "mean_angular_error_deg": err,
            })
        );
    } else {
        println!(
            "mean angular error over {} samples: {:.3} deg",
            samples.len(),
            err
        );
    }
    Ok(0)
}

fn cmd_infer(args: InferArgs) -> Result<u8> {
    let model = load_checkpoint(&args.checkpoint)
        .with_context(|| format!("loading checkpoint {}", args.checkpoint.display()))?;
    let file = File::open(&args.input)
        .with_context(|| format!("opening image {}", args.input.display()))?;
    let image = read_tensor(&mut BufReader::new(file))
        .with_context(|| format!("reading image tensor {}", args.input.display()))?;
    let out = model.infer(&image).context("inference")?;
    let (yaw, pitch) = (out.data()[0], out.data()[1]);
    if args.json {
        println!(
            "{}",
            serde_json::json!({
                "yaw_rad": yaw,
                "pitch_rad": pitch,
                "yaw_deg": yaw.to_degrees(),
                "pitch_deg": pitch.to_degrees(),
            })
        );
    } else {
        println!(
            "yaw {:.6} rad ({:.2} deg), pitch {:.6} rad ({:.2} deg)",
            yaw,
            yaw.to_degrees(),
            pitch,
            pitch.to_degrees()
        );
    }
    Ok(0)
}
