//! `rewardsynth`: generate demonstrations, synthesize potential programs,
//! score and shape with them, and check policy invariance.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::ProposerKind;

#[derive(Parser, Debug)]
#[command(name = "rewardsynth", version, about = "Synthesize and verify shaped reward programs")]
struct Cli {
    /// Worker threads for data-parallel work (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// More log output (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write scripted demonstrations of the synthetic pick-and-place task.
    GenDemos(GenDemosArgs),
    /// Search for a potential program that explains a labeled dataset.
    Synthesize(SynthesizeArgs),
    /// Score a program against a dataset.
    Score(ScoreArgs),
    /// Emit the per-step shaped reward of one trajectory as CSV.
    Shape(ShapeArgs),
    /// Check that shaping leaves optimal policies unchanged on random MDPs.
    VerifyInvariance(VerifyArgs),
}

#[derive(Args, Debug)]
pub struct GenDemosArgs {
    /// Output JSONL path. The manifest goes next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Action noise magnitude.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Fraction of the start region objects are drawn from.
    #[arg(long, default_value_t = 1.0)]
    pub coverage: f64,
    #[arg(long, value_enum, default_value_t = commands::Region::Train)]
    pub region: commands::Region,
    /// `mixed` writes `count` rollouts of each kind.
    #[arg(long, value_enum, default_value_t = commands::Kind::Success)]
    pub kind: commands::Kind,
    #[arg(long, default_value_t = 100)]
    pub max_frames: usize,
    /// Also write the ground-truth potential program here.
    #[arg(long)]
    pub ground_truth: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthesizeArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub reflection_size: Option<usize>,
    /// Parameter-tuning evaluations per candidate.
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long, value_enum)]
    pub proposer: Option<ProposerKind>,
    /// Continue from `<out-dir>/checkpoint.json`.
    #[arg(long)]
    pub resume: bool,
    /// Print the effective configuration and exit.
    #[arg(long)]
    pub print_config: bool,
}

#[derive(Args, Debug)]
pub struct ProgramArgs {
    /// Program source file.
    #[arg(long)]
    pub program: PathBuf,
    /// Comma-separated parameter values (default: the program's defaults).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub theta: Option<Vec<f64>>,
    #[arg(long)]
    pub dataset: PathBuf,
}

#[derive(Args, Debug)]
pub struct MilestoneArgs {
    /// Milestone count with equal bonuses 1/k.
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Explicit comma-separated bonuses (overrides --k).
    #[arg(long, value_delimiter = ',')]
    pub bonuses: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0.99)]
    pub gamma: f64,
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub program: ProgramArgs,
    #[command(flatten)]
    pub milestones: MilestoneArgs,
    /// Weights of stage, progress and positivity components.
    #[arg(long, value_delimiter = ',', default_value = "1,1,1")]
    pub weights: Vec<f64>,
    /// Report JSON path (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-frame CSV of potentials and stages.
    #[arg(long)]
    pub frames: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ShapeArgs {
    #[command(flatten)]
    pub program: ProgramArgs,
    #[command(flatten)]
    pub milestones: MilestoneArgs,
    /// Trajectory index within the dataset.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    /// CSV path (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    #[arg(long, default_value_t = 50)]
    pub max_states: usize,
    #[arg(long, default_value_t = 5)]
    pub max_actions: usize,
    #[arg(long, default_value_t = 8)]
    pub max_k: usize,
    #[arg(long, default_value_t = 0.5)]
    pub gamma_min: f64,
    #[arg(long, default_value_t = 0.99)]
    pub gamma_max: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Every n-th MDP gets a spike potential (0 disables).
    #[arg(long, default_value_t = 5)]
    pub adversarial_every: usize,
    /// Report JSON path (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Failure classes and their exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Config,
    Dataset,
    Proposer,
    Invariance,
}

impl Exit {
    fn code(self) -> u8 {
        match self {
            Exit::Config => 2,
            Exit::Dataset => 3,
            Exit::Proposer => 4,
            Exit::Invariance => 5,
        }
    }
}

impl fmt::Display for Exit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Exit::Config => "configuration error",
            Exit::Dataset => "dataset error",
            Exit::Proposer => "proposer backend failure",
            Exit::Invariance => "invariance violation",
        })
    }
}

impl std::error::Error for Exit {}

/// Tag an error with its exit class.
pub trait Classify<T> {
    fn class(self, exit: Exit) -> anyhow::Result<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn class(self, exit: Exit) -> anyhow::Result<T> {
        self.map_err(|e| e.into().context(exit))
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).format_timestamp(None).init();
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let exec = commands::executor(cli.jobs).class(Exit::Config)?;
    match cli.command {
        Command::GenDemos(a) => commands::gen_demos(&a),
        Command::Synthesize(a) => commands::synthesize(&a, exec),
        Command::Score(a) => commands::score(&a, exec),
        Command::Shape(a) => commands::shape(&a),
        Command::VerifyInvariance(a) => commands::verify_invariance(&a, exec),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Finds the class at any context depth.
            let exit = e.downcast_ref::<Exit>().copied();
            eprintln!("error: {e:#}");
            ExitCode::from(exit.map_or(1, Exit::code))
        }
    }
}
