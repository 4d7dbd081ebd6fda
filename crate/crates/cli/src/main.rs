//! `sparsesplat` command-line tool.

mod commands;
mod error;
mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "sparsesplat", version, about = "Sparse-view Gaussian splatting experiments")]
pub struct Cli {
    /// Worker threads for rendering and co-pruning [default: all cores]
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scene: ground-truth field, cameras, images and depth
    Synth(SynthArgs),
    /// Train on a scene directory
    #[command(after_help = commands::config_help())]
    Train(TrainArgs),
    /// Render views of a field
    Render(RenderArgs),
    /// PSNR / SSIM of a field against scene views
    Eval(EvalArgs),
    /// Write the interpolated pose track between cameras
    InterpPoses(InterpArgs),
    /// Remove splats of A with no splat of B within delta
    Coprune(CopruneArgs),
    /// Patch density control and edge spawning on a field, offline
    #[command(after_help = commands::config_help())]
    FadpRun(FadpArgs),
    /// Re-run the command recorded in a manifest
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 12)]
    pub cameras: usize,
    #[arg(long, default_value_t = 1500)]
    pub splats: usize,
    /// Square image side
    #[arg(long, default_value_t = 64)]
    pub resolution: usize,
    #[arg(long, default_value_t = 3)]
    pub train_views: usize,
    /// Angular span of the camera ring in degrees
    #[arg(long, default_value_t = 180.0)]
    pub arc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Holdout,
    All,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory written by `synth`
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// File of `key = value` lines
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key, e.g. `--set delta=2.5`; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Comma-separated modules to disable: pl, fadp, cpg [default: none]
    #[arg(long, value_name = "LIST")]
    pub ablate: Option<String>,
    /// Pseudo-label frames: `gt`, `crossfade`, or a directory of `pair{n}_alpha{k}of{S}.png`
    #[arg(long, default_value = "gt")]
    pub frames: String,
    /// Shorthand for `--set total_iterations=N` [default: 20000]
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Shorthand for `--set seed=N` [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Do not echo log rows to stderr
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub ply: PathBuf,
    /// Camera list JSON
    #[arg(long)]
    pub cameras: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Background as `r,g,b` in [0, 1]
    #[arg(long, default_value = "0,0,0")]
    pub background: String,
    /// Also write 32-bit float depth maps
    #[arg(long)]
    pub depth: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ply: PathBuf,
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long, value_enum, default_value_t = Split::Holdout)]
    pub split: Split,
    /// Write `metrics.tsv` and a manifest here
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InterpArgs {
    /// Camera list JSON
    #[arg(long)]
    pub cameras: PathBuf,
    /// Comma-separated camera indices in track order [default: all]
    #[arg(long)]
    pub views: Option<String>,
    #[arg(long, default_value_t = 4)]
    pub factor: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CopruneArgs {
    pub a: PathBuf,
    pub b: PathBuf,
    /// Distance threshold in scene units
    #[arg(long)]
    pub delta: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Also prune B against the original A
    #[arg(long)]
    pub both: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FadpMode {
    Patch,
    Edge,
    Both,
}

#[derive(Debug, Args)]
pub struct FadpArgs {
    #[arg(long)]
    pub ply: PathBuf,
    /// Directory written by `synth`; its training views are used
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = FadpMode::Both)]
    pub mode: FadpMode,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write detected edges as 1-bit PNGs
    #[arg(long)]
    pub edges_png: bool,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

fn run(args: Vec<OsString>) -> Result<(), CliError> {
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return Ok(());
            }
            return Err(CliError::Usage(e.render().to_string().trim_end().to_string()));
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    let argv = commands::recorded_argv(&args[1..]);
    commands::dispatch(cli.command, argv)
}

fn main() -> ExitCode {
    match run(std::env::args_os().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string();
            let line = msg.lines().next().unwrap_or("");
            eprintln!("error: {}", line.strip_prefix("error: ").unwrap_or(line));
            ExitCode::from(e.exit_code())
        }
    }
}
