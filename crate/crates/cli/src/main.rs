//! `ppf`: train point pair feature models, detect objects in depth images,
//! synthesize scenes and evaluate results.
//!
//! Machine-readable output (JSON lines, metadata block first) goes to
//! standard output, a human summary to standard error. Exit status is 0 on
//! success, 1 when `detect` finds nothing and 2 on usage or input errors.

mod commands;
mod config;
mod scenes;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "ppf", version, about = "Point pair feature 6D pose estimation")]
struct Cli {
    /// Pipeline configuration (YAML or JSON, may be partial or the metadata
    /// block of an earlier run).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Worker threads (default: one per core). Results do not depend on it.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a model table (PPFM) from a PLY model.
    Train(TrainArgs),
    /// Detect the model in one depth image.
    Detect(DetectArgs),
    /// Render synthetic scenes with ground truth.
    Synth(SynthArgs),
    /// Add VSD errors to a results file and summarize recall.
    EvalVsd(EvalArgs),
    /// Detect in every scene of a directory and report timings.
    Bench(BenchArgs),
}

#[derive(Args)]
pub struct TrainArgs {
    /// PLY model, or `builtin:l_bracket`.
    #[arg(long)]
    pub model: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Subsampling leaf as a fraction of the model diameter.
    #[arg(long)]
    pub leaf_frac: Option<f64>,
}

#[derive(Args)]
pub struct DetectArgs {
    /// Model table written by `train`.
    #[arg(long)]
    pub table: PathBuf,
    /// 16-bit PNG depth image.
    #[arg(long)]
    pub depth: PathBuf,
    /// Intrinsics file (fx, fy, cx, cy, width, height).
    #[arg(long)]
    pub intrinsics: PathBuf,
    /// Mesh rendered during verification instead of point splats (PLY or
    /// `builtin:l_bracket`, in the model frame).
    #[arg(long)]
    pub mesh: Option<String>,
    /// Millimeters per depth count; overrides the config.
    #[arg(long)]
    pub depth_scale: Option<f64>,
    /// Defaults to the name of the depth image's directory.
    #[arg(long)]
    pub scene_id: Option<String>,
    /// Defaults to the table file name.
    #[arg(long)]
    pub object_id: Option<String>,
}

#[derive(Args)]
pub struct SynthArgs {
    /// Scene spec (YAML).
    #[arg(long, conflicts_with = "random", required_unless_present = "random")]
    pub spec: Option<PathBuf>,
    /// Generate this many random scenes instead of reading a spec.
    #[arg(long, value_name = "N")]
    pub random: Option<usize>,
    /// Output directory; scenes go to `<out>/<scene_id>/`.
    #[arg(long)]
    pub out: PathBuf,
    /// Noise seed of a spec scene, or the generator seed with `--random`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Model to render (PLY or `builtin:l_bracket`); defaults to the
    /// builtin object when the spec names it.
    #[arg(long)]
    pub model: Option<String>,
    /// Also write the rendered model as PLY.
    #[arg(long)]
    pub model_out: Option<PathBuf>,
    /// Scene id of a spec scene.
    #[arg(long, default_value = "000000")]
    pub scene_id: String,
    /// Intrinsics for random scenes (default: a 640×480 Kinect-like camera).
    #[arg(long)]
    pub intrinsics: Option<PathBuf>,
    /// Depth noise sigma (mm) of random scenes.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Put an occluder hiding 5–30 % of the object in random scenes.
    #[arg(long)]
    pub occluder: bool,
    /// Wall this many mm behind the object in random scenes.
    #[arg(long)]
    pub backdrop: Option<f64>,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Results file (JSON lines) as written by `detect` or `bench`.
    #[arg(long)]
    pub results: PathBuf,
    /// Scene directory holding the ground truth.
    #[arg(long)]
    pub scenes: PathBuf,
    /// Model rendered for VSD (PLY or `builtin:l_bracket`).
    #[arg(long)]
    pub model: String,
    /// Also write the summary table as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub table: PathBuf,
    #[arg(long)]
    pub scenes: PathBuf,
    /// Mesh used for verification and, when given, VSD against `gt.json`.
    #[arg(long)]
    pub mesh: Option<String>,
    #[arg(long)]
    pub object_id: Option<String>,
    /// Only the first N scenes.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Also write the summary table as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = config::load_config(cli.config.as_deref()).and_then(|cfg| match &cli.command {
        Command::Train(a) => commands::train(a, cfg),
        Command::Detect(a) => commands::detect(a, cfg),
        Command::Synth(a) => commands::synth(a, cfg),
        Command::EvalVsd(a) => commands::eval_vsd(a, cfg),
        Command::Bench(a) => commands::bench(a, cfg),
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
