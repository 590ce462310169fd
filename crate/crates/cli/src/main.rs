//! `tacmamba` command-line experiments.

/// `println!` that ignores a closed stdout (e.g. piped into `head`).
macro_rules! say {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

mod commands;
mod config;
mod error;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use tacmamba::bench::{BenchKind, CountingAlloc};
use tacmamba::runtime::ClockKind;
use tacmamba::sim::ScenarioKind;
use tacmamba::train::SamplerKind;

use crate::error::CliError;

// Peak-memory columns of bench-latency come from this allocator.
#[global_allocator]
static ALLOC: CountingAlloc = CountingAlloc;

#[derive(Parser, Debug)]
#[command(name = "tacmamba", version, about = "Tactile history encoder experiments", long_about = None)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// TOML experiment config; absent sections and keys use built-in defaults
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Artifact directory for this run [default: <out-root>/<command>]
    #[arg(long, short, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Root under which per-command artifact directories are created
    #[arg(long, global = true, env = "TACMAMBA_OUT", default_value = "runs", value_name = "DIR")]
    pub out_root: PathBuf,
    /// Master seed; overrides `seed` in the config and is copied into every section
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Log progress to stderr (-v info, -vv debug)
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write labeled synthetic trajectories (TACM + JSON sidecar)
    Gen(GenArgs),
    /// Segment trajectories into phases; reports onset recall when labels exist
    Segment(SegmentArgs),
    /// Stage 1: ternary temporal-order pretraining of the encoder
    Pretrain(PretrainArgs),
    /// Stage 2: planner fine-tuning on a frozen pretrained encoder
    Finetune(FinetuneArgs),
    /// Per-step latency and peak memory over history lengths
    BenchLatency(BenchLatencyArgs),
    /// Ternary-task accuracy of the encoder against lstm_single
    BenchAccuracy(BenchAccuracyArgs),
    /// Dual-rate fast/slow loop run producing a RunReport
    RunAsync(RunAsyncArgs),
    /// Print the header of a TACM, TACW, report, metrics or CSV file as JSON
    Inspect(InspectArgs),
}

#[derive(Args, Debug)]
pub struct GenArgs {
    /// button_press | sequential_buttons | pick_place_counting | idle_hold
    #[arg(long)]
    pub scenario: Option<ScenarioKind>,
    #[arg(long)]
    pub presses: Option<usize>,
    #[arg(long)]
    pub cycles: Option<usize>,
    #[arg(long)]
    pub channels: Option<usize>,
    /// Trajectory length in seconds
    #[arg(long)]
    pub duration: Option<f32>,
    /// Number of trajectories; trajectory i uses seed + i
    #[arg(long, default_value_t = 1)]
    pub count: usize,
}

#[derive(Args, Debug)]
pub struct SegmentArgs {
    /// TACM files or directories containing them
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Onset matching tolerance in samples
    #[arg(long, default_value_t = 5)]
    pub tolerance: usize,
}

#[derive(Args, Debug)]
pub struct DataArgs {
    /// Directory of TACM files; without it `dataset.trajectories` are generated from `[scenario]`
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Stop once held-out accuracy reaches this value
    #[arg(long)]
    pub target: Option<f64>,
}

#[derive(Args, Debug)]
pub struct FinetuneArgs {
    /// Stage-1 checkpoint (TACW)
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    /// phase-uniform | uniform
    #[arg(long)]
    pub sampler: Option<SamplerKind>,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Stop once held-out critical-phase accuracy reaches this value
    #[arg(long)]
    pub target: Option<f64>,
}

#[derive(Args, Debug)]
pub struct BenchLatencyArgs {
    /// Comma-separated subset of tacmamba,cnn1d,lstm_single,lstm_bi_full,attn_full
    #[arg(long, value_delimiter = ',')]
    pub kinds: Option<Vec<BenchKind>>,
    /// Comma-separated history lengths
    #[arg(long, value_delimiter = ',')]
    pub lengths: Option<Vec<usize>>,
}

#[derive(Args, Debug)]
pub struct BenchAccuracyArgs {
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub trajectories: Option<usize>,
}

#[derive(Args, Debug)]
pub struct RunAsyncArgs {
    /// simulated | wall
    #[arg(long)]
    pub clock: Option<ClockKind>,
    /// Run length in seconds
    #[arg(long)]
    pub duration: Option<f64>,
    /// Encoder checkpoint (TACW); a freshly initialized encoder otherwise
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    /// Replay this TACM file (looping) instead of live synthetic episodes
    #[arg(long, value_name = "FILE")]
    pub trajectory: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    pub path: PathBuf,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            std::process::exit(0);
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ").to_string();
            fail(CliError::Usage(first));
        }
    };
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(e) = commands::run(&cli.global, cli.command) {
        fail(e);
    }
}

fn fail(e: CliError) -> ! {
    eprintln!("{}", e.json_line());
    std::process::exit(e.code());
}
