//! `regionfer`: prepare datasets, train region models, evaluate, and
//! render class activation heatmaps.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 usage or malformed input,
//! 3 checkpoint or class mismatch, 4 numeric divergence.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "REGIONFER_OUT";

#[derive(Parser, Debug)]
#[command(name = "regionfer", version, about = "Face-region expression analysis")]
#[command(after_help = "Exit codes: 0 ok, 1 I/O failure, 2 usage or malformed input, \
3 checkpoint/class mismatch, 4 numeric divergence.\n\
Outputs default to $REGIONFER_OUT (or ./regionfer-out) when --out is omitted.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Ingest an official dataset into a prepared store.
    Prepare(PrepareArgs),
    /// List region landmark sets, or crop regions out of one image.
    Regions(RegionsArgs),
    /// Generate a synthetic prepared store.
    Synth(SynthArgs),
    /// Train a model on one face region of a prepared store.
    Train(TrainArgs),
    /// Evaluate one checkpoint, or compare one checkpoint per region.
    Eval(EvalArgs),
    /// Render class activation heatmaps with a visualizer checkpoint.
    Cam(CamArgs),
    /// Write pooled visualizer features as a tab-separated table.
    ExportFeatures(ExportArgs),
}

#[derive(Args, Debug)]
struct Output {
    /// Output location [default: under $REGIONFER_OUT or ./regionfer-out]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct PrepareArgs {
    #[command(subcommand)]
    source: PrepareSource,
}

#[derive(Subcommand, Debug)]
enum PrepareSource {
    /// FER2013 pixel CSV plus FER+ vote CSV.
    Ferplus {
        #[arg(long)]
        pixels: PathBuf,
        #[arg(long)]
        votes: PathBuf,
        /// Minimum vote share of the winning emotion.
        #[arg(long, default_value_t = 0.5)]
        vote_threshold: f64,
        #[command(flatten)]
        output: Output,
    },
    /// RAF-DB basic-emotion images and label list.
    Rafdb {
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[command(flatten)]
        output: Output,
    },
    /// ExpW images and label file.
    Expw {
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Faces are kept when their confidence is strictly greater.
        #[arg(long, default_value_t = 60.0)]
        min_confidence: f64,
        /// Seed of the stratified 4:1 split.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        output: Output,
    },
}

#[derive(Args, Debug)]
struct RegionsArgs {
    /// Image to crop; without it the landmark index sets are listed.
    #[arg(long)]
    image: Option<PathBuf>,
    /// Landmark sidecar [default: the image path with a .lmk extension]
    #[arg(long, requires = "image")]
    landmarks: Option<PathBuf>,
    /// Regions to report [default: the seven standard regions]
    #[arg(long, value_delimiter = ',')]
    region: Vec<String>,
    #[arg(long, default_value_t = 0.05)]
    margin: f64,
    /// Directory for the crops; without it only boxes are printed.
    #[arg(long, requires = "image")]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SynthKind {
    /// Schematic faces with the class pattern in one region.
    Faces,
    /// Wide, landmark-free crops for padding comparisons.
    Wide,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, value_enum, default_value_t = SynthKind::Faces)]
    kind: SynthKind,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 100)]
    per_class: usize,
    /// Region holding the class signal (faces only).
    #[arg(long, default_value = "mouth")]
    signal: String,
    #[arg(long, default_value_t = 10.0)]
    noise_std: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    output: Output,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ModelKind {
    Classifier,
    Visualizer,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Prepared store directory.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    region: String,
    #[arg(long, value_enum, default_value_t = ModelKind::Classifier)]
    model: ModelKind,
    /// Classifier conv widths, stages separated by `/`: e.g. `16,16/32,32`
    /// [default: 64,64/128,128/256,256,256/256,256,256]
    #[arg(long)]
    plan: Option<String>,
    /// Visualizer stem width.
    #[arg(long, default_value_t = 16)]
    initial_channels: usize,
    #[arg(long, default_value_t = 3)]
    blocks: usize,
    #[arg(long, default_value_t = 16)]
    layers_per_block: usize,
    #[arg(long, default_value_t = 12)]
    growth_rate: usize,
    #[arg(long, default_value_t = 0.5)]
    compression: f64,
    #[arg(long, default_value_t = 0.05)]
    lr0: f64,
    #[arg(long, default_value_t = 100)]
    max_epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// Independently seeded runs; the best by test accuracy is kept.
    #[arg(long, default_value_t = 5)]
    runs: usize,
    #[arg(long, default_value_t = 0.5)]
    lr_decay: f64,
    #[arg(long, default_value_t = 3)]
    lr_patience: usize,
    #[arg(long, default_value_t = 10)]
    stop_patience: usize,
    #[arg(long, default_value_t = 1e-5)]
    min_lr: f64,
    #[arg(long, default_value_t = 0.05)]
    margin: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Disable random crops and mirroring.
    #[arg(long)]
    no_augment: bool,
    /// Square crops by cutting the long side instead of zero padding.
    #[arg(long)]
    no_padding: bool,
    /// Suppress per-epoch progress on stderr.
    #[arg(long)]
    quiet: bool,
    #[command(flatten)]
    output: Output,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    /// One checkpoint, or one per region for a region comparison.
    #[arg(long, required = true, num_args = 1..)]
    checkpoint: Vec<PathBuf>,
    #[arg(long, default_value = "test")]
    split: String,
    /// Drop a `contempt` class from matrices and accuracies.
    #[arg(long)]
    mask_contempt: bool,
    /// Force a region report even for a single checkpoint.
    #[arg(long)]
    compare: bool,
    #[command(flatten)]
    output: Output,
}

#[derive(Args, Debug)]
struct CamArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Images to render (a `.lmk` sidecar next to each is used when present).
    #[arg(long, num_args = 1.., conflicts_with = "data")]
    image: Vec<PathBuf>,
    /// Prepared store to draw samples from.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: String,
    /// Number of store samples to render.
    #[arg(long, default_value_t = 8)]
    limit: usize,
    /// `all`, or comma-separated class names or indices.
    #[arg(long, default_value = "all")]
    classes: String,
    #[command(flatten)]
    output: Output,
}

#[derive(Args, Debug)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    #[command(flatten)]
    output: Output,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Prepare(a) => commands::prepare(a),
        Command::Regions(a) => commands::regions(a),
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Cam(a) => commands::cam(a),
        Command::ExportFeatures(a) => commands::export_features(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("regionfer: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
