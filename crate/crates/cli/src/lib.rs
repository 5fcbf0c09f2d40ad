//! `funcsense` command line: corpus extraction, embedding, agreement,
//! adjudication, training, experiments, projection, prediction and the
//! annotation server.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use funcsense_core::corpus::{ContextMode, Tokenizer};
use funcsense_core::projection::ScatterFormat;

mod commands;
pub mod config;
pub mod server;

pub use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] funcsense_core::Error),
    #[error("{0}")]
    Usage(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl CliError {
    /// 1 for domain, usage and configuration errors; 2 for I/O, transport
    /// and protocol errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_environmental() => 2,
            CliError::Io(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "funcsense", version, about = "Sense classification workbench for function words")]
pub struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract target-word instances from a plain-text corpus.
    Extract(ExtractArgs),
    /// Convert a delimited table into gold JSONL.
    Import(ImportArgs),
    /// Embed instances and write a binary cache.
    Embed(EmbedArgs),
    /// Agreement between the two annotators of a gold file.
    Agree(AgreeArgs),
    /// List disagreements, or apply adjudication decisions.
    Adjudicate(AdjudicateArgs),
    /// Train a one-vs-rest model on a whole experiment's data.
    Train(TrainArgs),
    /// Cross-validated experiment reports.
    Experiment(ExperimentArgs),
    /// 2D PCA scatter of the embeddings.
    Project(ProjectArgs),
    /// Predict classes for cached embeddings.
    Predict(PredictArgs),
    /// Run the annotation API and host the UI.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub target: Option<String>,
    /// Stop after this many instances.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Space-separated delimiter tokens; replaces the default set.
    #[arg(long, value_delimiter = ' ')]
    pub delimiters: Option<Vec<String>>,
    #[arg(long, value_enum)]
    pub tokenizer: Option<TokenizerArg>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum TokenizerArg {
    Simple,
    Pretokenized,
}

impl From<TokenizerArg> for Tokenizer {
    fn from(t: TokenizerArg) -> Self {
        match t {
            TokenizerArg::Simple => Tokenizer::Simple,
            TokenizerArg::Pretokenized => Tokenizer::Pretokenized,
        }
    }
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum ModeArg {
    Phrasal,
    Sentential,
}

impl From<ModeArg> for ContextMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Phrasal => ContextMode::Phrasal,
            ModeArg::Sentential => ContextMode::Sentential,
        }
    }
}

#[derive(Debug, Args)]
pub struct ImportArgs {
    #[arg(long)]
    pub table: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Field separator: "tab", "comma", "semicolon" or a single character.
    #[arg(long, default_value = "tab")]
    pub separator: String,
    #[arg(long, default_value = "sentence")]
    pub text_column: String,
    #[arg(long)]
    pub id_column: Option<String>,
    #[arg(long, default_value = "class")]
    pub gold_column: String,
    #[arg(long)]
    pub label_a_column: Option<String>,
    #[arg(long)]
    pub label_b_column: Option<String>,
    /// Column holding the 0-based occurrence of the target within the row.
    #[arg(long)]
    pub occurrence_column: Option<String>,
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long, value_enum)]
    pub tokenizer: Option<TokenizerArg>,
}

#[derive(Debug, Args, Default)]
pub struct ProviderArgs {
    #[arg(long, value_enum)]
    pub provider: Option<config::ProviderKind>,
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub embed_seed: Option<u64>,
    #[arg(long)]
    pub pooling: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub layer: Option<i64>,
    /// Request memo file, created or extended.
    #[arg(long)]
    pub memo: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    /// Instance JSONL (from `extract`) or gold JSONL.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Output cache file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[command(flatten)]
    pub provider: ProviderArgs,
}

#[derive(Debug, Args)]
pub struct AgreeArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, default_value = "A")]
    pub annotator_a: String,
    #[arg(long, default_value = "B")]
    pub annotator_b: String,
    /// Also write the report as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AdjudicateArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Tab-separated "instance_id<TAB>class_id" lines.
    #[arg(long, requires = "out")]
    pub decisions: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value = "adjudication")]
    pub adjudicator: String,
}

#[derive(Debug, Args, Default)]
pub struct TrainFlags {
    #[arg(long = "c")]
    pub c: Option<f64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub shuffle_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub cache: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// exp1, exp2 or exp3-<feature>.
    #[arg(long, default_value = "exp1")]
    pub experiment: String,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// exp1, exp2, exp3 (all five features) or exp3-<feature>.
    pub name: String,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub cache: Option<PathBuf>,
    /// Report directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub fold_seed: Option<u64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub stratified: Option<bool>,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub cache: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to the output extension (.svg or .tsv).
    #[arg(long, value_parser = parse_format)]
    pub format: Option<ScatterFormat>,
    /// Keep only these classes, e.g. 2,3,4.
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<i64>>,
    /// Fit PCA on the filtered subset (true) or on all instances (false).
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub refit: bool,
}

fn parse_format(s: &str) -> Result<ScatterFormat, String> {
    s.parse().map_err(|e: funcsense_core::Error| e.to_string())
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub cache: Option<PathBuf>,
    /// Prediction JSONL; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Abstain unless the top score is positive and leads by this margin.
    #[arg(long)]
    pub min_margin: Option<f64>,
    /// Gold JSONL to score the answered predictions against.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub host: Option<String>,
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
    #[arg(long)]
    pub annotator_a: Option<String>,
    #[arg(long)]
    pub annotator_b: Option<String>,
    #[arg(long)]
    pub save: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Extract(a) => commands::extract(a, &mut cfg),
        Command::Import(a) => commands::import(a, &mut cfg),
        Command::Embed(a) => commands::embed(a, &mut cfg),
        Command::Agree(a) => commands::agree(a, &mut cfg),
        Command::Adjudicate(a) => commands::adjudicate(a, &mut cfg),
        Command::Train(a) => commands::train(a, &mut cfg),
        Command::Experiment(a) => commands::experiment(a, &mut cfg),
        Command::Project(a) => commands::project(a, &mut cfg),
        Command::Predict(a) => commands::predict(a, &mut cfg),
        Command::Serve(a) => commands::serve(a, &mut cfg),
    }
}
