use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use orchardsynth::config::{ConfigError, RunConfig};
use orchardsynth::dataset::{self, DatasetError, DatasetManifest, ExportOptions, ImageBand, SplitOptions, SplitRatio};
use orchardsynth::eval::{self, EvalError, EvalOptions, Interpolation, MetricsReport};
use orchardsynth::pipeline::{self, PipelineError};
use thiserror::Error;

const THREADS_ENV: &str = "ORCHARDSYNTH_THREADS";

/// Synthetic RGB + NIR walnut orchard images, detection datasets and scoring.
#[derive(Debug, Parser)]
#[command(name = "orchardsynth", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render labeled synthetic images and their manifests.
    Generate(GenerateArgs),
    /// Assign train/val splits to a manifest.
    Split(SplitArgs),
    /// Append a synthetic manifest to a real one.
    Mix(MixArgs),
    /// Write a split manifest as an images/ + labels/ training tree.
    Export(ExportArgs),
    /// Score prediction files against ground-truth label files.
    Eval(EvalArgs),
    /// Compare two metrics reports side by side.
    Report(ReportArgs),
    /// Check a config file and print the effective settings.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
struct ConfigArg {
    /// JSON run configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Master seed (overrides generation.master_seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Number of images (overrides generation.count).
    #[arg(long)]
    count: Option<u32>,
    /// Smallest visible walnut to label, in pixels (overrides label.min_pixels).
    #[arg(long)]
    min_pixels: Option<u32>,
}

#[derive(Debug, Args)]
struct SplitArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Manifest to split.
    #[arg(long)]
    manifest: PathBuf,
    /// Output manifest path.
    #[arg(long)]
    out: PathBuf,
    /// Train:val ratio (overrides dataset.ratio).
    #[arg(long)]
    ratio: Option<SplitRatio>,
    /// Shuffle seed (overrides dataset.seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Keep every synthetic entry in train.
    #[arg(long)]
    synthetic_train_only: bool,
    /// Require the manifest to hold this band.
    #[arg(long)]
    band: Option<ImageBand>,
}

#[derive(Debug, Args)]
struct MixArgs {
    /// Manifest of real images.
    #[arg(long)]
    real: PathBuf,
    /// Manifest of synthetic images.
    #[arg(long)]
    synthetic: PathBuf,
    /// Output manifest path.
    #[arg(long)]
    out: PathBuf,
    /// Require both manifests to hold this band.
    #[arg(long)]
    band: Option<ImageBand>,
}

#[derive(Debug, Args)]
struct ExportArgs {
    /// Split manifest to export.
    #[arg(long)]
    manifest: PathBuf,
    /// Output tree root.
    #[arg(long)]
    out: PathBuf,
    /// Copy single-channel NIR PNGs unchanged instead of as three channels.
    #[arg(long)]
    single_channel_nir: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Directory of ground-truth `<stem>.txt` label files.
    #[arg(long)]
    gt: PathBuf,
    /// Directory of `<stem>.txt` prediction files.
    #[arg(long)]
    pred: PathBuf,
    /// Directory for metrics.json and metrics.txt.
    #[arg(long)]
    out: PathBuf,
    /// IoU needed for a match (overrides eval.iou_threshold).
    #[arg(long)]
    iou: Option<f64>,
    /// continuous | eleven-point (overrides eval.interpolation).
    #[arg(long)]
    interpolation: Option<Interpolation>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Metrics JSON of the original image set.
    #[arg(long)]
    original: PathBuf,
    /// Metrics JSON of the enhanced image set.
    #[arg(long)]
    enhanced: PathBuf,
    /// Heading line above the table.
    #[arg(long, default_value = "")]
    title: String,
    /// Also write the table to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[command(flatten)]
    config: ConfigArg,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Validation(_) => 1,
            Self::Io(_) => 2,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => Self::Io(e.to_string()),
            _ => Self::Validation(e.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        if e.is_io() {
            Self::Io(e.to_string())
        } else {
            Self::Validation(e.to_string())
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        if e.is_io() {
            Self::Io(e.to_string())
        } else {
            Self::Validation(e.to_string())
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Io { .. } => Self::Io(e.to_string()),
            _ => Self::Validation(e.to_string()),
        }
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn load_config(arg: &ConfigArg) -> Result<RunConfig, CliError> {
    let config = match &arg.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    Ok(config)
}

fn threads_from_env() -> Result<usize, CliError> {
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map_err(|_| CliError::Validation(format!("{THREADS_ENV}={v:?} is not a worker count"))),
        _ => Ok(0),
    }
}

fn read_manifest(path: &Path, band: Option<ImageBand>) -> Result<DatasetManifest, CliError> {
    let m = DatasetManifest::read(path)?;
    if let Some(b) = band.filter(|b| *b != m.band) {
        return Err(CliError::Validation(format!(
            "{} holds {} images, expected {b}",
            path.display(),
            m.band
        )));
    }
    Ok(m)
}

fn generate(args: GenerateArgs) -> Result<(), CliError> {
    let mut config = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        config.generation.master_seed = seed;
    }
    if let Some(count) = args.count {
        config.generation.count = count;
    }
    if let Some(min_pixels) = args.min_pixels {
        config.label.min_pixels = min_pixels;
    }
    config.validate()?;
    let threads = threads_from_env()?;
    let summary = pipeline::generate(&config, &args.out, threads)?;
    println!(
        "generated {} images ({} walnut boxes) in {}",
        summary.images,
        summary.boxes,
        args.out.display()
    );
    Ok(())
}

fn split(args: SplitArgs) -> Result<(), CliError> {
    let config = load_config(&args.config)?;
    let ratio = args.ratio.unwrap_or(config.dataset.ratio);
    let seed = args.seed.unwrap_or(config.dataset.seed);
    let options = SplitOptions {
        synthetic_train_only: args.synthetic_train_only || config.dataset.synthetic_train_only,
    };
    let m = read_manifest(&args.manifest, args.band)?;
    let out = dataset::split(&m, ratio, seed, options)?;
    out.write(&args.out)?;
    println!(
        "split {} entries at {ratio}: {} train / {} val",
        out.len(),
        out.count(dataset::Split::Train),
        out.count(dataset::Split::Val)
    );
    Ok(())
}

fn mix(args: MixArgs) -> Result<(), CliError> {
    let real = read_manifest(&args.real, args.band)?;
    let synthetic = read_manifest(&args.synthetic, args.band)?;
    let out = dataset::mix(&real, &synthetic)?;
    out.write(&args.out)?;
    println!(
        "mixed {} real + {} synthetic = {} entries",
        real.len(),
        synthetic.len(),
        out.len()
    );
    Ok(())
}

fn export(args: ExportArgs) -> Result<(), CliError> {
    let m = read_manifest(&args.manifest, None)?;
    let options = ExportOptions {
        nir_three_channel: !args.single_channel_nir,
    };
    let summary = dataset::export(&m, &args.out, options)?;
    println!(
        "exported {} train / {} val images to {}",
        summary.train,
        summary.val,
        args.out.display()
    );
    Ok(())
}

fn eval_cmd(args: EvalArgs) -> Result<(), CliError> {
    let config = load_config(&args.config)?;
    let options = EvalOptions {
        iou_threshold: args.iou.unwrap_or(config.eval.iou_threshold),
        interpolation: args.interpolation.unwrap_or(config.eval.interpolation),
        class_id: config.eval.class_id,
    };
    if !args.gt.is_dir() {
        return Err(CliError::Io(format!("{}: not a directory", args.gt.display())));
    }
    let report = eval::evaluate_dirs(&args.gt, &args.pred, &options)?;
    std::fs::create_dir_all(&args.out).map_err(|e| io_error(&args.out, e))?;
    let json = args.out.join("metrics.json");
    std::fs::write(&json, report.to_json()).map_err(|e| io_error(&json, e))?;
    let text = args.out.join("metrics.txt");
    std::fs::write(&text, report.to_text()).map_err(|e| io_error(&text, e))?;
    print!("{}", report.to_text());
    Ok(())
}

fn read_report(path: &Path) -> Result<MetricsReport, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    MetricsReport::from_json(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn report(args: ReportArgs) -> Result<(), CliError> {
    let original = read_report(&args.original)?;
    let enhanced = read_report(&args.enhanced)?;
    let table = eval::compare_report(&original, &enhanced, &args.title);
    if let Some(out) = &args.out {
        std::fs::write(out, &table).map_err(|e| io_error(out, e))?;
    }
    print!("{table}");
    Ok(())
}

fn validate(args: ValidateArgs) -> Result<(), CliError> {
    let config = load_config(&args.config)?;
    print!("{}", config.to_json());
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate(a) => generate(a),
        Command::Split(a) => split(a),
        Command::Mix(a) => mix(a),
        Command::Export(a) => export(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Report(a) => report(a),
        Command::Validate(a) => validate(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
