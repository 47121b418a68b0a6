//! `craft`: corpus mining, instruction synthesis, dataset mixing and
//! multiple-choice evaluation from one binary.

mod commands;
mod error;
mod run_record;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use craft_core::gen::GenMode;

use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(name = "craft", version, about = "Build region-specific instruction datasets from web corpora")]
struct Cli {
    /// Warn about unknown config keys instead of failing.
    #[arg(long, global = true)]
    lax: bool,

    /// Log filter (error, warn, info, debug, trace); overrides the config.
    #[arg(long, global = true)]
    log_level: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Chunk corpora, keep chunks with enough regional keywords, dedup.
    Extract(ExtractArgs),
    /// Ask an endpoint for one question per chunk and answer it.
    Generate(GenerateArgs),
    /// Sample and merge a general pool and a cultural pool.
    Mix(MixArgs),
    /// Emit one mix per cultural count over a fixed general sample.
    Sweep(SweepArgs),
    /// Score an endpoint on a multiple-choice dataset.
    Eval(EvalArgs),
    /// Print the statistics of a finished extraction.
    Stats(StatsArgs),
}

#[derive(Args, Debug)]
struct ExtractArgs {
    /// TOML run config.
    #[arg(long)]
    config: PathBuf,
    /// Chunk size limit in tokens.
    #[arg(long)]
    max_tokens: Option<usize>,
    /// Distinct keywords a chunk needs to be kept.
    #[arg(long)]
    min_distinct: Option<usize>,
    /// Worker threads; the core count when unset.
    #[arg(long)]
    workers: Option<usize>,
    /// Write candidates in corpus order.
    #[arg(long)]
    stable_order: bool,
    /// Where the candidate files go, instead of `<output_root>/extract`.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum ModeArg {
    Cd,
    Cf,
    Both,
}

impl From<ModeArg> for GenMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Cd => GenMode::ContextDependent,
            ModeArg::Cf => GenMode::ContextFree,
            ModeArg::Both => GenMode::Both,
        }
    }
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// Candidate files from `extract` (repeatable).
    #[arg(long, num_args = 1..)]
    candidates: Vec<PathBuf>,
    /// Answer with the chunk as context (cd), without it (cf), or both.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Instruction file to write.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Endpoint and generation settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write records in input order.
    #[arg(long)]
    stable_order: bool,
}

#[derive(Args, Debug)]
struct MixArgs {
    /// TOML file with the mix spec.
    #[arg(long)]
    spec: PathBuf,
    /// Sampling seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Records drawn from the general pool.
    #[arg(long)]
    general_count: Option<usize>,
    /// Records drawn from the cultural pool.
    #[arg(long)]
    cultural_count: Option<usize>,
    /// Mixed dataset to write.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Accept pools smaller than the requested counts.
    #[arg(long)]
    allow_short: bool,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// TOML file with the mix spec; its cultural count is ignored.
    #[arg(long)]
    spec: PathBuf,
    /// Gap between consecutive cultural counts.
    #[arg(long, default_value_t = craft_core::mixer::DEFAULT_SWEEP_STEP)]
    step: usize,
    /// Largest cultural count in the sweep.
    #[arg(long)]
    max: usize,
    /// Sampling seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Base output path; each point gets a `.cultural-NNNNN` suffix.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// JSONL multiple-choice items.
    #[arg(long)]
    dataset: PathBuf,
    /// Directory of `*.txt` prompt templates; the shipped five when omitted.
    #[arg(long)]
    templates: Option<PathBuf>,
    /// TOML endpoint settings.
    #[arg(long)]
    endpoint: PathBuf,
    /// JSON report to write.
    #[arg(long)]
    out: PathBuf,
    /// Dataset layout: indexed or lettered.
    #[arg(long, default_value = "indexed")]
    adapter: String,
    /// Response log path; defaults to `<out>.responses.jsonl`.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct StatsArgs {
    /// Extraction output directory.
    #[arg(long)]
    run: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            e.report();
            ExitCode::from(1)
        }
    }
}

/// Initializes logging once the level is known.
fn init_logging(flag: Option<&str>, configured: Option<&str>) {
    let level = flag.or(configured).unwrap_or("info");
    let env = env_logger::Env::default().default_filter_or(level);
    let _ = env_logger::Builder::from_env(env).format_timestamp_millis().try_init();
}

fn absolute(p: &std::path::Path) -> Result<PathBuf, CliError> {
    std::path::absolute(p).map_err(|e| CliError::io(p, e))
}
