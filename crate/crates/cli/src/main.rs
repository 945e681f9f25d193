use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use lesion_gan::checkpoint::Checkpoint;
use lesion_gan::data::{
    image_dimensions, load_image, load_mask, save_mask_png, save_samples, synthesize_disk_dataset,
    DatasetManifest, Sample, Split,
};
use lesion_gan::metrics::{confusion, Aggregation, MetricsReport};
use lesion_gan::networks::{binarize, Discriminator, Generator, ParamBreakdown};
use lesion_gan::tensor::ops::bilinear_resize_tensor;
use lesion_gan::train::{bench, evaluate, Trainer};
use lesion_gan::{Error, Result, Tensor, TrainConfig};
use rand::SeedableRng;

#[derive(Parser)]
#[command(name = "lesion-gan", version, about = "Lightweight adversarial skin-lesion segmentation")]
struct Cli {
    /// Worker threads for kernel parallelism; overrides LESION_GAN_THREADS.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train generator and discriminator adversarially.
    Train(TrainArgs),
    /// Segment images with a trained checkpoint.
    Infer(InferArgs),
    /// Score a checkpoint, or a directory of predicted masks, against a labelled manifest.
    Eval(EvalArgs),
    /// Report parameter counts per module.
    CountParams(CountArgs),
    /// Time single-image inference at several input sizes.
    Bench(BenchArgs),
    /// Write a synthetic lesion dataset and its manifest.
    Synth(SynthArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// `key = value` configuration file; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training manifest (`image<TAB>mask` per line).
    #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
    manifest: Option<PathBuf>,
    /// Train on this many synthetic images instead of a manifest.
    #[arg(long)]
    synthetic: Option<usize>,
    /// Seed for the synthetic training images.
    #[arg(long, default_value_t = 7)]
    data_seed: u64,
    /// Validation manifest; enables best-checkpoint tracking.
    #[arg(long)]
    val: Option<PathBuf>,
    /// Output directory for checkpoints and the loss log.
    #[arg(long)]
    out: PathBuf,
    /// Override `seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Override `max_steps` from the config.
    #[arg(long)]
    max_steps: Option<u64>,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Image files or directories of images.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Directory receiving one `<stem>.png` mask per image.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum AggregationArg {
    PerImage,
    Pixel,
}

#[derive(Args)]
struct EvalArgs {
    /// Labelled manifest to score against.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, conflicts_with = "predictions", required_unless_present = "predictions")]
    checkpoint: Option<PathBuf>,
    /// Directory of `<stem>.png` masks to score instead of running a network.
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Working resolution when scoring predictions (checkpoints use their own).
    #[arg(long, default_value_t = 128)]
    size: usize,
    #[arg(long, value_enum, default_value_t = AggregationArg::PerImage)]
    aggregation: AggregationArg,
    /// Write the report as CSV here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct CountArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override `scale_factor`.
    #[arg(long)]
    scale: Option<f64>,
}

#[derive(Args)]
struct BenchArgs {
    /// Weights to time; fresh weights from `--config` otherwise.
    #[arg(long, conflicts_with = "config")]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = [64, 128, 256])]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 2)]
    warmup: usize,
    #[arg(long, default_value_t = 5)]
    iters: usize,
    /// Use the worker pool instead of a single thread.
    #[arg(long)]
    parallel: bool,
    /// Write the report as CSV here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Usage(_) | Error::Config(_) | Error::Dimension { .. } | Error::Domain(_) => 1,
        Error::Io { .. } | Error::Format { .. } => 2,
        Error::Numeric { .. } => 3,
    }
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig> {
    let cfg = match path {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn load_manifest(path: &Path, split: Split, size: usize) -> Result<Vec<Sample>> {
    DatasetManifest::load(path, split, size)?.load_samples()
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(m) = a.max_steps {
        cfg.max_steps = m;
    }
    cfg.validate()?;
    let size = cfg.model.input_size;
    let samples = match (a.synthetic, &a.manifest) {
        (Some(n), _) => synthesize_disk_dataset(n, size, a.data_seed)?,
        (None, Some(m)) => load_manifest(m, Split::Train, size)?,
        (None, None) => return Err(Error::Usage("need --manifest or --synthetic".into())),
    };
    let val = a.val.as_deref().map(|v| load_manifest(v, Split::Val, size)).transpose()?;
    let mut trainer = Trainer::new(cfg)?;
    let summary = trainer.fit(&samples, val.as_deref(), Some(&a.out))?;
    println!("steps {}", summary.steps);
    if let Some(r) = summary.last {
        println!("gen_loss {} disc_loss {}", r.gen_loss, r.disc_loss);
    }
    if let Some((jsc, step)) = summary.best {
        println!("best validation JSC {jsc:.4} at step {step}");
    }
    if summary.stopped_early {
        println!("stopped early");
    }
    if let Some(p) = summary.final_checkpoint {
        println!("checkpoint {}", p.display());
    }
    Ok(())
}

fn is_image(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("png" | "jpg" | "jpeg" | "bmp")
    )
}

fn collect_images(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| Error::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| is_image(p))
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    if out.is_empty() {
        return Err(Error::Usage("no input images found".into()));
    }
    Ok(out)
}

fn stem(p: &Path) -> Result<String> {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .ok_or_else(|| Error::Usage(format!("{} has no file name", p.display())))
}

fn infer(a: InferArgs) -> Result<()> {
    let gen = Checkpoint::load(&a.checkpoint)?.generator()?;
    let size = gen.config().input_size;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    for path in collect_images(&a.inputs)? {
        let (h, w) = image_dimensions(&path)?;
        let soft = gen.predict(&load_image(&path, size)?)?;
        let soft = if (h, w) == (size, size) { soft } else { bilinear_resize_tensor(&soft, h, w)? };
        let mask = binarize(&soft, a.threshold as lesion_gan::Real);
        let dst = a.out.join(format!("{}.png", stem(&path)?));
        save_mask_png(&dst, &mask)?;
        log::info!("{} -> {}", path.display(), dst.display());
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let aggregation = match a.aggregation {
        AggregationArg::PerImage => Aggregation::PerImage,
        AggregationArg::Pixel => Aggregation::PixelPooled,
    };
    let report = match (&a.checkpoint, &a.predictions) {
        (Some(ckpt), _) => {
            let gen = Checkpoint::load(ckpt)?.generator()?;
            let samples = load_manifest(&a.manifest, Split::Test, gen.config().input_size)?;
            evaluate(&gen, &samples, 0.5, aggregation)?
        }
        (None, Some(dir)) => {
            let manifest = DatasetManifest::load(&a.manifest, Split::Test, a.size)?;
            let mut counts = Vec::with_capacity(manifest.entries.len());
            for e in &manifest.entries {
                let gt_path = e.mask.as_deref().ok_or_else(|| {
                    Error::Usage(format!("{} has no mask", e.image.display()))
                })?;
                let id = stem(&e.image)?;
                let gt: Tensor = load_mask(gt_path, a.size)?;
                let pred = load_mask(&dir.join(format!("{id}.png")), a.size)?;
                counts.push((id, confusion(&gt, &pred)?));
            }
            MetricsReport::from_counts(&counts, aggregation)?
        }
        (None, None) => return Err(Error::Usage("need --checkpoint or --predictions".into())),
    };
    print!("{}", report.to_table());
    if let Some(p) = &a.report {
        report.write_csv(p)?;
    }
    Ok(())
}

fn count_params(a: CountArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(s) = a.scale {
        cfg.model.scale_factor = s;
    }
    cfg.model.validate()?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let g = Generator::new(&cfg.model, &mut rng)?;
    let d = Discriminator::new(&cfg.model, &mut rng)?;
    let breakdown = ParamBreakdown {
        generator: ParamBreakdown::group(&g),
        discriminator: ParamBreakdown::group(&d),
    };
    println!("{breakdown}");
    Ok(())
}

fn run_bench(a: BenchArgs, threads: Option<usize>) -> Result<()> {
    let gen = match (&a.checkpoint, &a.config) {
        (Some(c), _) => Checkpoint::load(c)?.generator()?,
        (None, cfg) => {
            let cfg = load_config(cfg.as_deref())?;
            Generator::new(&cfg.model, &mut rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed))?
        }
    };
    let workers = if a.parallel {
        threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, usize::from))
    } else {
        1
    };
    let report = bench(&gen, &a.sizes, a.warmup, a.iters, workers)?;
    println!("{report}");
    if let Some(p) = &a.report {
        std::fs::write(p, report.to_csv()).map_err(|e| Error::io(p, e))?;
    }
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let samples = synthesize_disk_dataset(a.n, a.size, a.seed)?;
    let manifest = save_samples(&samples, &a.out)?;
    println!("{}", manifest.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let threads = lesion_gan::configure_threads(cli.threads)?;
    log::debug!("{threads} worker threads");
    match cli.command {
        Command::Train(a) => train(a),
        Command::Infer(a) => infer(a),
        Command::Eval(a) => eval(a),
        Command::CountParams(a) => count_params(a),
        Command::Bench(a) => run_bench(a, cli.threads),
        Command::Synth(a) => synth(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let _ = e.print();
            eprintln!("\n{}", Cli::command().render_help());
            return ExitCode::from(1);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
