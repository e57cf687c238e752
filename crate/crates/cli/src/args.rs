use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

/// Generate, validate, split, annotate and evaluate Winograd-style
/// coreference instances.
///
/// Settings come from command-line flags first, then the `--config` file,
/// then built-in defaults.
#[derive(Debug, Parser)]
#[command(name = "winoforge", version, about, long_about = None)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for splits and the mock backend.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Replace the model backend with a scripted mock (JSON script file).
    #[arg(long, global = true, value_name = "FILE")]
    pub mock_script: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render prompts, query a model and write candidate instances.
    Generate(GenerateArgs),
    /// Re-run structural checks; exit 1 if any record fails.
    Validate(ValidateArgs),
    /// Drop records whose normalized sentence was already seen.
    Dedup(DedupArgs),
    /// Stratified test/validation/few-shot split.
    Split(SplitArgs),
    /// Composition of a dataset by category, generator, pronoun and bias tag.
    Stats(StatsArgs),
    /// Serve the annotation API, or export the filtered dataset.
    Annotate(AnnotateArgs),
    /// Evaluate one or more models on a dataset.
    Evaluate(EvaluateArgs),
    /// Score saved results and build the consistency matrix.
    Analyze(AnalyzeArgs),
    /// Re-render a report directory as Markdown.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Generator model id.
    #[arg(long)]
    pub model: Option<String>,
    /// Prompt template: nt, cot, sc_cot, coe, tot, toe.
    #[arg(long)]
    pub template: Option<String>,
    /// Query: wdq, wiq, ambiguous, offensive:<tag>.
    #[arg(long)]
    pub query: Option<String>,
    /// Pairs requested per call.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Number of calls.
    #[arg(long)]
    pub batches: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub max_tokens: Option<u32>,
    /// Allow offensive-category queries. See the ethics note in the README.
    #[arg(long)]
    pub enable_offensive: bool,
    /// Few-shot bank (JSONL); the built-in bank by default.
    #[arg(long, value_name = "FILE")]
    pub bank: Option<PathBuf>,
    /// Record every request and response as JSONL.
    #[arg(long, value_name = "FILE")]
    pub transcript: Option<PathBuf>,
    /// Merge into an existing output file instead of replacing it.
    #[arg(long)]
    pub append: bool,
    /// Candidate dataset to write.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long, value_name = "FILE")]
    pub dataset: PathBuf,
    /// Lowest label that fails validation: semi_valid or invalid.
    #[arg(long, default_value = "invalid")]
    pub fail_on: String,
    /// Write the records with refreshed violations and labels.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DedupArgs {
    #[arg(long, value_name = "FILE")]
    pub dataset: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long, value_name = "FILE")]
    pub dataset: PathBuf,
    #[arg(long)]
    pub test: Option<usize>,
    #[arg(long)]
    pub val: Option<usize>,
    #[arg(long)]
    pub fewshot: Option<usize>,
    /// Treat the whole dataset as one stratum.
    #[arg(long)]
    pub no_stratify: bool,
    /// Directory for test.jsonl, val.jsonl, fewshot.jsonl and split.json.
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long, value_name = "FILE")]
    pub dataset: PathBuf,
    /// Print JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct AnnotateArgs {
    #[arg(long, value_name = "FILE")]
    pub dataset: PathBuf,
    /// Verdict journal; defaults to `<dataset>.verdicts.jsonl`.
    #[arg(long, value_name = "FILE")]
    pub journal: Option<PathBuf>,
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long)]
    pub required_raters: Option<usize>,
    /// Accepted annotator ids, comma separated. Any id when unset.
    #[arg(long, value_delimiter = ',')]
    pub annotators: Vec<String>,
    /// Static files for the annotation UI.
    #[arg(long, value_name = "DIR")]
    pub ui_dir: Option<PathBuf>,
    /// Write the records every annotator marked valid, then exit.
    #[arg(long, value_name = "FILE")]
    pub export_filtered: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Dataset file, or a split directory used with --split.
    #[arg(long, value_name = "PATH")]
    pub dataset: PathBuf,
    /// Split name (test, val, fewshot).
    #[arg(long)]
    pub split: Option<String>,
    /// Evaluator model id; repeat for several.
    #[arg(long = "model")]
    pub models: Vec<String>,
    #[arg(long)]
    pub template: Option<String>,
    /// Few-shot examples: zero, bank, by_category.
    #[arg(long)]
    pub shots: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub max_tokens: Option<u32>,
    #[arg(long)]
    pub chunk_size: Option<usize>,
    /// Leave unparseable outputs out of accuracy denominators.
    #[arg(long)]
    pub exclude_unparseable: bool,
    /// Include offensive-category instances.
    #[arg(long)]
    pub enable_offensive: bool,
    #[arg(long, value_name = "FILE")]
    pub transcript: Option<PathBuf>,
    /// Output directory for results, checkpoints and reports.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long, value_name = "FILE")]
    pub dataset: PathBuf,
    /// Result files written by `evaluate`.
    #[arg(long = "results", value_name = "FILE", num_args = 1.., required = true)]
    pub results: Vec<PathBuf>,
    #[arg(long)]
    pub exclude_unparseable: bool,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory holding report.json and optionally consistency.json.
    #[arg(long, value_name = "DIR")]
    pub dir: PathBuf,
}
