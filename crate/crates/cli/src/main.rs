use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use wavecnn_core::analysis::kernel_spectra;
use wavecnn_core::audio::dataset::{DatasetIndex, LoadOptions, StandardizeMode};
use wavecnn_core::train::{evaluate, run_smoke, AdamConfig, Checkpoint, SmokeConfig, TrainConfig, Trainer};
use wavecnn_core::zoo::{ArchitectureSpec, LayerKind, ModelGraph, INPUT_SAMPLES};
use wavecnn_core::RandomSource;

/// Train, evaluate and inspect very deep 1D CNNs on raw audio.
///
/// WAVECNN_THREADS caps the worker thread count (0 or unset: one per core).
/// RUST_LOG controls log verbosity (default: info).
#[derive(Debug, Parser)]
#[command(name = "wavecnn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model on a fold-organized corpus.
    Train(TrainArgs),
    /// Report accuracy and the confusion matrix on one fold.
    Eval(EvalArgs),
    /// Print the layer table, shape trace and parameter counts.
    Inspect(InspectArgs),
    /// Write first-layer kernel spectra as CSV and optionally PGM.
    Kernels(KernelsArgs),
    /// Overfit a narrow M3 on synthetic sine-versus-noise clips.
    Smoke(SmokeArgs),
    /// Write a freshly initialized checkpoint.
    Init(InitArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StandardizeArg {
    PerClip,
    Corpus,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Architecture name, e.g. m3, m18, m34-res, m11-fc, m5-big.
    #[arg(long)]
    arch: String,
    /// Audio root; files are looked up in <data>/fold<k>/ and then <data>/.
    #[arg(long)]
    data: PathBuf,
    /// Metadata CSV with slice_file_name, fold and classID columns.
    #[arg(long)]
    meta: PathBuf,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// Adam learning rate.
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    beta2: f64,
    #[arg(long, default_value_t = 1e-8)]
    adam_eps: f64,
    /// ℓ2 coefficient applied to every trainable parameter.
    #[arg(long, default_value_t = 1e-4)]
    l2: f64,
    /// Exclude batch-norm gamma and beta from the ℓ2 term.
    #[arg(long, default_value_t = false)]
    l2_exclude_bn: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    test_fold: u8,
    /// Validation fold evaluated each epoch; 0 disables.
    #[arg(long, default_value_t = 9)]
    val_fold: u8,
    /// Number of classes; defaults to one more than the largest classID.
    #[arg(long)]
    classes: Option<usize>,
    /// Channel multiplier for every conv layer.
    #[arg(long, default_value_t = 1.0)]
    width: f64,
    #[arg(long, value_enum, default_value_t = StandardizeArg::PerClip)]
    standardize: StandardizeArg,
    /// Cache directory for preprocessed clips (per-clip standardization only).
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long, default_value = "model.ckpt")]
    out: PathBuf,
    /// Save every N epochs; 0 saves only at the end.
    #[arg(long, default_value_t = 0)]
    checkpoint_every: usize,
    #[arg(long, default_value = "metrics.csv")]
    log: PathBuf,
    /// Continue from this checkpoint; --epochs is the total to reach.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    meta: PathBuf,
    #[arg(long, default_value_t = 10)]
    fold: u8,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
}

#[derive(Debug, Args)]
struct InspectArgs {
    #[arg(long)]
    arch: String,
    #[arg(long, default_value_t = 10)]
    classes: usize,
    /// Input length for the shape trace, in samples.
    #[arg(long, default_value_t = INPUT_SAMPLES)]
    time: usize,
}

#[derive(Debug, Args)]
struct KernelsArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    out_csv: PathBuf,
    #[arg(long)]
    out_pgm: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SmokeArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    max_epochs: usize,
    #[arg(long, default_value_t = 32)]
    clips: usize,
    #[arg(long, default_value_t = 0.0625)]
    width: f64,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
}

#[derive(Debug, Args)]
struct InitArgs {
    #[arg(long)]
    arch: String,
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn init_threads() -> Result<()> {
    let n = match std::env::var("WAVECNN_THREADS") {
        Ok(v) => v.trim().parse::<usize>().with_context(|| format!("WAVECNN_THREADS={v:?} is not a count"))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn inspect(args: &InspectArgs) -> Result<()> {
    let spec = ArchitectureSpec::from_name(&args.arch, args.classes)?;
    let model: ModelGraph<f32> = ModelGraph::from_spec(spec.clone(), &mut RandomSource::new(0))?;
    println!("arch={} classes={} weight_layers={}", spec.name, spec.num_classes, model.weight_layer_count());
    println!();
    println!("{:<16} {:>4} {:>6} {:>8} {:>6} {:>4}", "kind", "rf", "stride", "channels", "repeat", "bn");
    for l in &spec.layers {
        let kind = match l.kind {
            LayerKind::Conv => "conv",
            LayerKind::MaxPool4 => "maxpool4",
            LayerKind::ResblockGroup => "resblock_group",
            LayerKind::GlobalAvgPool => "global_avg_pool",
            LayerKind::Flatten => "flatten",
            LayerKind::FcBlock => "fc_block",
            LayerKind::DenseSoftmax => "dense_softmax",
        };
        let dash = |v: usize, show: bool| if show { v.to_string() } else { "-".into() };
        let conv_like = matches!(l.kind, LayerKind::Conv | LayerKind::ResblockGroup);
        println!(
            "{:<16} {:>4} {:>6} {:>8} {:>6} {:>4}",
            kind,
            dash(l.rf, conv_like),
            dash(l.stride, conv_like),
            dash(l.out_channels, l.out_channels > 0),
            l.repeat,
            if l.with_bn { "yes" } else { "no" }
        );
    }
    println!();
    println!("shape trace at T={}:", args.time);
    for e in spec.shape_trace(args.time)? {
        println!("  {:<16} {:>6} x {}", e.layer, e.time, e.channels);
    }
    let count = model.count_parameters();
    println!();
    println!("parameters by layer:");
    for (layer, n) in &count.per_layer {
        println!("  {layer:<16} {n:>10}");
    }
    println!();
    for e in spec.shape_trace(args.time)? {
        println!("trace_row layer={} time={} channels={}", e.layer, e.time, e.channels);
    }
    for (layer, n) in &count.per_layer {
        println!("param_row layer={layer} count={n}");
    }
    println!("params_exact={}", count.total);
    println!("params_rounded={}", count.rounded_label());
    Ok(())
}

fn load_index(meta: &Path) -> Result<DatasetIndex> {
    let index = DatasetIndex::from_path(meta)?;
    if index.is_empty() {
        bail!("{} lists no clips", meta.display());
    }
    Ok(index)
}

fn train(args: &TrainArgs) -> Result<()> {
    let index = load_index(&args.meta)?;
    let classes = args.classes.unwrap_or_else(|| index.num_classes());
    let val_fold = (args.val_fold != 0).then_some(args.val_fold);
    let splits = index.split(args.test_fold, val_fold);
    if splits.train.is_empty() {
        bail!("no training clips outside the test and validation folds");
    }
    let opts = LoadOptions {
        standardize: match args.standardize {
            StandardizeArg::PerClip => StandardizeMode::PerClip,
            StandardizeArg::Corpus => StandardizeMode::Corpus,
        },
        cache_dir: args.cache.clone(),
        ..LoadOptions::new(&args.data)
    };
    let mode = index.standardization(&splits.train, &opts)?;
    log::info!(
        "loading {} train, {} validation, {} test clips",
        splits.train.len(),
        splits.val.len(),
        splits.test.len()
    );
    let train_set = index.load(&splits.train, &opts, mode)?;
    let val_set = index.load(&splits.val, &opts, mode)?;
    let test_set = index.load(&splits.test, &opts, mode)?;

    let config = TrainConfig {
        arch: args.arch.clone(),
        num_classes: classes,
        width: args.width,
        input_samples: INPUT_SAMPLES,
        epochs: args.epochs,
        batch_size: args.batch_size,
        adam: AdamConfig {
            lr: args.lr,
            beta1: args.beta1,
            beta2: args.beta2,
            eps: args.adam_eps,
        },
        l2: args.l2,
        l2_exclude_bn: args.l2_exclude_bn,
        seed: args.seed,
        test_fold: args.test_fold,
        val_fold,
        checkpoint_path: Some(args.out.clone()),
        checkpoint_every: args.checkpoint_every,
        log_path: Some(args.log.clone()),
    };
    let mut trainer = match &args.resume {
        Some(path) => Trainer::resume(&Checkpoint::load(path)?, config)?,
        None => Trainer::new(config)?,
    };
    let reports = trainer.train(
        &train_set,
        Some(&test_set),
        Some(&val_set),
        |r, _| {
            println!(
                "epoch={} train_loss={:.6} train_acc={:.4} val_acc={} test_acc={} seconds={:.1}",
                r.epoch,
                r.train_loss,
                r.train_acc,
                r.val_acc.map_or("-".into(), |a| format!("{a:.4}")),
                r.test_acc.map_or("-".into(), |a| format!("{a:.4}")),
                r.seconds
            );
            ControlFlow::Continue(())
        },
    )?;
    println!("trained {} epoch(s); checkpoint at {}", reports.len(), args.out.display());
    Ok(())
}

fn eval(args: &EvalArgs) -> Result<()> {
    let ck = Checkpoint::load(&args.ckpt)?;
    let model = ck.to_model()?;
    let index = load_index(&args.meta)?;
    let indices: Vec<usize> = (0..index.len()).filter(|&i| index.records[i].fold == args.fold).collect();
    if indices.is_empty() {
        bail!("fold {} has no clips", args.fold);
    }
    let opts = LoadOptions {
        samples: model.spec().input_samples,
        ..LoadOptions::new(&args.data)
    };
    let set = index.load(&indices, &opts, wavecnn_core::audio::Standardization::PerClip)?;
    let e = evaluate(&model, &set, args.batch_size)?;
    println!("arch={} fold={} clips={}", ck.arch, args.fold, e.total);
    println!("accuracy={:.6}", e.accuracy);
    println!("confusion (rows: true class, columns: predicted):");
    for (i, row) in e.confusion.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|c| format!("{c:>5}")).collect();
        println!("{i:>3} {}", cells.join(""));
    }
    Ok(())
}

fn kernels(args: &KernelsArgs) -> Result<()> {
    let m = kernel_spectra(&args.ckpt)?;
    std::fs::write(&args.out_csv, m.to_csv()).with_context(|| format!("writing {}", args.out_csv.display()))?;
    if let Some(pgm) = &args.out_pgm {
        std::fs::write(pgm, m.to_pgm()).with_context(|| format!("writing {}", pgm.display()))?;
    }
    println!("kernels={} bins={} rf={}", m.rows.len(), m.bins(), m.receptive_field);
    Ok(())
}

fn smoke(args: &SmokeArgs) -> Result<bool> {
    let cfg = SmokeConfig {
        seed: args.seed,
        max_epochs: args.max_epochs,
        clips: args.clips,
        width: args.width,
        batch_size: args.batch_size,
        ..SmokeConfig::default()
    };
    let report = run_smoke(&cfg)?;
    for (i, (loss, acc)) in report.losses.iter().zip(&report.accuracies).enumerate() {
        println!("epoch={} train_loss={loss:.6} train_acc={acc:.4}", i + 1);
    }
    match report.solved_at {
        Some(e) => println!("smoke: 100% training accuracy at epoch {e}"),
        None => println!("smoke: did not reach 100% training accuracy in {} epochs", cfg.max_epochs),
    }
    Ok(report.passed())
}

fn init(args: &InitArgs) -> Result<()> {
    let spec = ArchitectureSpec::from_name(&args.arch, args.classes)?;
    let mut rng = RandomSource::derive(args.seed, wavecnn_core::Stream::Init, 0);
    let model: ModelGraph<f32> = ModelGraph::from_spec(spec, &mut rng)?;
    Checkpoint::capture(&model, None, 0, RandomSource::new(args.seed).state(), None).save(&args.out)?;
    println!("wrote {} ({} parameters)", args.out.display(), model.count_parameters().total);
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    init_threads()?;
    match &cli.command {
        Command::Train(a) => train(a)?,
        Command::Eval(a) => eval(a)?,
        Command::Inspect(a) => inspect(a)?,
        Command::Kernels(a) => kernels(a)?,
        Command::Smoke(a) => return smoke(a),
        Command::Init(a) => init(a)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
