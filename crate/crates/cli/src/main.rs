//! `cascadener`: the extract-then-classify NER cascade and its data tooling.
//!
//! Exit codes: 0 success, 1 operational error, 2 usage error.

mod backends;
mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Op(String),
}

impl CliError {
    pub fn op(e: impl std::fmt::Display) -> Self {
        CliError::Op(e.to_string())
    }

    fn code(&self) -> u8 {
        match self {
            CliError::Op(_) => 1,
            CliError::Usage(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "cascadener",
    version,
    about = "Extract-then-classify NER cascade and dataset tooling"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Seed for every stochastic step; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Config file of `key = value` lines.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Replay file of recorded backend responses.
    #[arg(long, global = true, value_name = "FILE")]
    pub replay: Option<PathBuf>,
    /// Serve backend calls from the replay file, or call through and record.
    #[arg(long, global = true, value_enum, default_value_t = ReplayModeArg::Playback)]
    pub replay_mode: ReplayModeArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReplayModeArg {
    Playback,
    Record,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Supervised,
    ZeroShot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LevelArg {
    Coarse,
    Medium,
    Fine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Jsonl,
    Conll,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum UnknownArg {
    Drop,
    Fp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Text,
    Json,
}

/// Label set used by `ner` and `classify`.
#[derive(Debug, Args)]
pub struct LabelArgs {
    /// Comma-separated flat type list; replaces taxonomy descent.
    #[arg(long, value_delimiter = ',', conflicts_with_all = ["taxonomy", "depth"])]
    pub types: Option<Vec<String>>,
    /// Taxonomy file (`level<TAB>name<TAB>parent`) or `dynamicner` for the built-in one.
    #[arg(long, value_name = "FILE")]
    pub taxonomy: Option<String>,
    /// Deepest taxonomy level to descend to.
    #[arg(long, value_enum)]
    pub depth: Option<LevelArg>,
    /// Supervised lists only, or zero-shot with an `unknown` answer.
    #[arg(long, value_enum, default_value_t = ModeArg::Supervised)]
    pub mode: ModeArg,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Full cascade over a sentence or corpus JSONL file.
    Ner(NerArgs),
    /// Extraction rounds and fused spans only.
    Extract(ExtractArgs),
    /// Label the gold spans of a corpus.
    Classify(ClassifyArgs),
    /// Score predictions against gold.
    Eval(EvalArgs),
    /// Distribution and cohesion report of a corpus.
    Metrics(MetricsArgs),
    /// Dynamic re-categorization.
    Dyncat {
        #[command(subcommand)]
        command: DyncatCommand,
    },
    /// Stratified sample by entity type.
    Sample(SampleArgs),
    /// Seeded split into parts.
    Split(SplitArgs),
    /// Remove records too similar to a reference set.
    Decontaminate(DecontaminateArgs),
    /// Convert between JSONL and CoNLL.
    Convert(ConvertArgs),
    /// Check a corpus against the record invariants.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct NerArgs {
    /// Sentences (`{id, text, language}`) or corpus records.
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    /// Predictions JSONL; the manifest goes to `<FILE>.manifest.json`.
    #[arg(long, value_name = "FILE")]
    pub output: PathBuf,
    /// Extraction rounds fused per sentence.
    #[arg(long)]
    pub rounds: Option<usize>,
    /// Sentences processed concurrently.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Stop at the first failing sentence.
    #[arg(long)]
    pub fail_fast: bool,
    #[command(flatten)]
    pub labels: LabelArgs,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    /// JSONL with fused spans and every round.
    #[arg(long, value_name = "FILE")]
    pub output: PathBuf,
    #[arg(long)]
    pub rounds: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    /// Corpus whose spans are labeled; its own type lists are used unless
    /// `--types` or `--taxonomy` is given.
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub output: PathBuf,
    #[command(flatten)]
    pub labels: LabelArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "FILE")]
    pub pred: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub gold: PathBuf,
    /// Unknown predictions are dropped or counted as false positives.
    #[arg(long, value_enum, default_value_t = UnknownArg::Drop)]
    pub unknown: UnknownArg,
    /// Project both sides to this taxonomy level first.
    #[arg(long, value_enum)]
    pub level: Option<LevelArg>,
    /// Taxonomy for `--level`; defaults to the built-in one.
    #[arg(long, value_name = "FILE")]
    pub taxonomy: Option<String>,
    #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
    pub format: ReportFormat,
    /// Write the report here instead of stdout.
    #[arg(long, value_name = "FILE")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    /// Also compute per-category cohesion with the configured embedder.
    #[arg(long)]
    pub cohesion: bool,
    #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
    pub format: ReportFormat,
    #[arg(long, value_name = "FILE")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum DyncatCommand {
    /// Run the four re-categorization rounds.
    Run(DyncatArgs),
}

#[derive(Debug, Args)]
pub struct DyncatArgs {
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub output: PathBuf,
    /// Audit log JSONL; defaults to `<output>.audit.jsonl`.
    #[arg(long, value_name = "FILE")]
    pub log: Option<PathBuf>,
    /// Synonym table (`name<TAB>syn1|syn2`); the built-in starter table otherwise.
    #[arg(long, value_name = "FILE")]
    pub synonyms: Option<PathBuf>,
    /// Taxonomy file or `dynamicner`.
    #[arg(long, value_name = "FILE")]
    pub taxonomy: Option<String>,
    /// Use embedding cohesion to modulate rounds 1 and 3.
    #[arg(long)]
    pub cohesion: bool,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub output: PathBuf,
    /// Requested total of labels across categories.
    #[arg(long)]
    pub total: usize,
    /// Sample manifest; defaults to `<output>.manifest.json`.
    #[arg(long, value_name = "FILE")]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub output_dir: PathBuf,
    /// Part ratios, comma-separated.
    #[arg(long, value_delimiter = ',', default_value = "1,1,3")]
    pub ratios: Vec<f64>,
    /// Part names, one per ratio; `<name>.jsonl` is written for each.
    #[arg(long, value_delimiter = ',', default_value = "train,dev,test")]
    pub names: Vec<String>,
}

#[derive(Debug, Args)]
pub struct DecontaminateArgs {
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    /// Sentences or corpus records to compare against.
    #[arg(long, value_name = "FILE")]
    pub reference: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub output: PathBuf,
    /// Records with a cosine strictly above this are removed.
    #[arg(long, default_value_t = 0.8)]
    pub threshold: f64,
    /// Exclusion list JSONL; defaults to `<output>.excluded.jsonl`.
    #[arg(long, value_name = "FILE")]
    pub exclusions: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub output: PathBuf,
    /// Input format; inferred from the extension when absent.
    #[arg(long, value_enum)]
    pub from: Option<FormatArg>,
    /// Output format; inferred from the extension when absent.
    #[arg(long, value_enum)]
    pub to: Option<FormatArg>,
    /// Language of CoNLL sentences without a `# language =` comment.
    #[arg(long, default_value = "en")]
    pub language: String,
    /// Repair stray I- tags instead of failing.
    #[arg(long)]
    pub lenient: bool,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    #[arg(long, default_value = "en")]
    pub language: String,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, CliError::Usage(_)) {
                eprintln!("run `cascadener --help` for usage");
            }
            ExitCode::from(e.code())
        }
    }
}
