mod commands;
mod config;

use std::ffi::OsString;
use std::num::NonZeroUsize;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::LazyLock;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use abbrev_core::classifier::Provider;
use abbrev_core::embedding::CONTEXTUAL_VERSION;
use abbrev_core::expansion::MODEL_VERSION;
use abbrev_core::Error;

static VERSION: LazyLock<String> = LazyLock::new(|| {
    format!(
        "{} (model format DCBM v{MODEL_VERSION}, contextual format CTXE v{CONTEXTUAL_VERSION})",
        env!("CARGO_PKG_VERSION")
    )
});

#[derive(Debug, Parser)]
#[command(name = "abbrev", version = VERSION.as_str(), about = "Biomedical abbreviation dataset construction, training and expansion")]
struct Cli {
    /// TSV of `flag TAB value` lines used for flags not given on the command line
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Worker threads for per-abbreviation work [default: all cores]
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<NonZeroUsize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Harvest labeled abbreviation occurrences from a corpus of abstracts
    Extract(ExtractArgs),
    /// Group each abbreviation's definitions into a sense inventory
    Group(GroupArgs),
    /// Filter ambiguous abbreviations and split their instances
    Build(BuildArgs),
    /// Train one classifier per abbreviation
    Train(TrainArgs),
    /// Score trained models or the majority baseline on test instances
    Evaluate(EvaluateArgs),
    /// Expand ambiguous abbreviations in a corpus with trained models
    Expand(ExpandArgs),
    /// Summarize a built dataset
    Stats(StatsArgs),
}

#[derive(Debug, Args)]
struct ExtractArgs {
    /// Corpus TSV: abstract id TAB text
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn unit_interval(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1]"))
    }
}

fn positive_f64(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(format!("{v} must be a positive finite number"))
    }
}

fn non_negative_f64(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(format!("{v} must be a non-negative finite number"))
    }
}

#[derive(Debug, Args)]
struct GroupArgs {
    /// Raw instance TSV from `extract`
    #[arg(long)]
    raw: PathBuf,
    /// Definition surface TAB comma-separated MeSH descriptor ids
    #[arg(long)]
    mesh: Option<PathBuf>,
    #[arg(long, default_value_t = abbrev_core::grouping::DEFAULT_THETA_MESH, value_parser = unit_interval)]
    theta_mesh: f64,
    #[arg(long, default_value_t = abbrev_core::grouping::DEFAULT_THETA_EDIT, value_parser = unit_interval)]
    theta_edit: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BuildArgs {
    #[arg(long)]
    raw: PathBuf,
    /// Sense inventory TSV from `group`
    #[arg(long)]
    inventory: PathBuf,
    /// Abbreviations kept regardless of dominant-sense prevalence, one per line
    #[arg(long)]
    allow: Option<PathBuf>,
    /// Abbreviations always dropped, one per line
    #[arg(long)]
    deny: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    /// Split-tagged dataset TSV
    #[arg(long)]
    out: PathBuf,
    /// Inventories of the kept abbreviations, recounted over matched instances
    #[arg(long)]
    inventory_out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Split-tagged dataset TSV from `build`
    #[arg(long)]
    dataset: PathBuf,
    /// Inventory TSV from `build --inventory-out`
    #[arg(long)]
    inventory: PathBuf,
    #[arg(long, default_value = "static-bilstm", value_parser = parse_provider)]
    provider: Provider,
    /// Contextual layer file, required by contextual providers
    #[arg(long)]
    contextual: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    /// Receives one model and training log per abbreviation, plus manifest.tsv and vocabulary.txt
    #[arg(long)]
    out_dir: PathBuf,
    /// Train only these abbreviations
    #[arg(long = "abbreviation")]
    abbreviations: Vec<String>,
    #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u32).range(1..=4096))]
    hidden: u32,
    /// Hidden FFN widths, comma-separated; empty for a single linear layer
    #[arg(long, value_delimiter = ',', default_value = "64")]
    ffn_width: Vec<NonZeroUsize>,
    #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u32).range(1..=4096))]
    embed_dim: u32,
    #[arg(long, default_value_t = 1e-3, value_parser = positive_f64)]
    learning_rate: f64,
    #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u32).range(1..))]
    batch_size: u32,
    #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u32).range(1..))]
    max_epochs: u32,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u32).range(1..))]
    patience: u32,
    /// Global gradient-norm cap; 0 disables clipping
    #[arg(long, default_value_t = 5.0, value_parser = non_negative_f64)]
    clip_norm: f64,
    #[arg(long, default_value_t = 1)]
    vocab_min_count: usize,
    #[arg(long, default_value_t = 20_000, value_parser = clap::value_parser!(u32).range(1..))]
    vocab_max_size: u32,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Model file; repeatable
    #[arg(long = "model", conflicts_with = "manifest")]
    models: Vec<PathBuf>,
    /// Manifest TSV from `train`
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Instance TSV; split-tagged files contribute only their test rows
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    contextual: Option<PathBuf>,
    /// Score the majority baseline from the train rows instead of models
    #[arg(long, requires = "inventory", conflicts_with_all = ["models", "manifest"])]
    majority: bool,
    /// Inventory TSV, needed for the majority baseline
    #[arg(long)]
    inventory: Option<PathBuf>,
    /// Report TSV [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory receiving one confusion matrix TSV per abbreviation
    #[arg(long)]
    confusion_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExpandArgs {
    /// Ambiguous abbreviations, one per line
    #[arg(long)]
    vocabulary: PathBuf,
    /// Abbreviation TAB model path
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    contextual: Option<PathBuf>,
    /// Reject models trained with a different provider
    #[arg(long, value_parser = parse_provider)]
    provider: Option<Provider>,
    /// Maximum cached models [default: unbounded]
    #[arg(long)]
    cache_capacity: Option<NonZeroUsize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct StatsArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    inventory: PathBuf,
    /// Statistics TSV; the table is always printed
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_provider(s: &str) -> Result<Provider, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Data(e)
    }
}

fn run(args: Vec<OsString>) -> Result<(), CliError> {
    let args = config::apply_config(args)?;
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    Ok(())
                }
                _ => Err(CliError::Usage(e.render().to_string())),
            }
        }
    };
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.get())
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot configure {n} threads: {e}")))?;
    }
    let summary = match cli.command {
        Command::Extract(a) => commands::extract(a)?,
        Command::Group(a) => commands::group(a)?,
        Command::Build(a) => commands::build(a)?,
        Command::Train(a) => commands::train(a)?,
        Command::Evaluate(a) => commands::evaluate(a)?,
        Command::Expand(a) => commands::expand(a)?,
        Command::Stats(a) => commands::stats(a)?,
    };
    println!("{summary}");
    Ok(())
}

fn main() -> ExitCode {
    match run(std::env::args_os().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprint!("{msg}");
            if !msg.ends_with('\n') {
                eprintln!();
            }
            ExitCode::from(1)
        }
        Err(CliError::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
