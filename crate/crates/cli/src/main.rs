//! `airdecode`: train attribute ensembles, generate with attribute control,
//! score generations and run strength sweeps.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use airdecode::CompositionMode;
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "airdecode", version, about = "Attribute-controlled n-gram text generation")]
pub struct Cli {
    /// TOML run configuration; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (defaults to the config's `out`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses every core. Results do not depend on this.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the base and per-label models and write a manifest.
    Train,
    /// Generate continuations steered toward target labels.
    Generate(GenerateArgs),
    /// Score generated texts: accuracy, perplexity and distinctness.
    Eval(EvalArgs),
    /// Sweep control strength (and optionally training volume).
    Sweep(SweepArgs),
    /// Recompute overlap ratios from saved generation traces.
    Diagnose(DiagnoseArgs),
    /// Write the bundled synthetic review corpus and a matching config.
    MakeToyCorpus(ToyArgs),
}

#[derive(Debug, Args, Default)]
pub struct DecodeFlags {
    /// Named preset (sentiment, topic, detox and their -medium/-large variants).
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub omega: Option<f64>,
    #[arg(long)]
    pub mode: Option<CompositionMode>,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub top_p: Option<f64>,
    #[arg(long)]
    pub length: Option<usize>,
    /// Top-set size for the overlap diagnostics.
    #[arg(long)]
    pub overlap_k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Ensemble manifest (defaults to `<out>/model/manifest.json` of the config).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Prompt text; repeat for several. Defaults to the config's prompts.
    #[arg(long)]
    pub prompt: Vec<String>,
    /// Target label; repeat for several. Defaults to every label.
    #[arg(long)]
    pub target: Vec<String>,
    /// Number of generations, cycling through targets then prompts.
    #[arg(short, long, default_value_t = 1)]
    pub num: usize,
    /// End a generation early when the end-of-sequence token is drawn.
    #[arg(long)]
    pub stop_at_eos: bool,
    #[command(flatten)]
    pub decode: DecodeFlags,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// JSONL with one `{"text", "target", "prompt"}` object per line, as
    /// written by `generate`.
    #[arg(long)]
    pub texts: PathBuf,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Held-out corpus to train the perplexity model on.
    #[arg(long)]
    pub eval_corpus: Option<PathBuf>,
    /// Saved n-gram model to use for perplexity.
    #[arg(long, conflicts_with = "eval_corpus")]
    pub eval_model: Option<PathBuf>,
    /// External scorer endpoint; without one the ensemble's Bayes classifier is used.
    #[arg(long, env = "AIRDECODE_CLASSIFIER_URL")]
    pub classifier_url: Option<String>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Comma-separated control strengths.
    #[arg(long, value_delimiter = ',')]
    pub omegas: Option<Vec<f64>>,
    /// Comma-separated modes.
    #[arg(long, value_delimiter = ',')]
    pub modes: Option<Vec<CompositionMode>>,
    #[arg(long)]
    pub samples: Option<usize>,
    /// Comma-separated documents-per-label for a training-volume sweep.
    #[arg(long, value_delimiter = ',')]
    pub volumes: Option<Vec<usize>>,
    /// Sweep a saved ensemble instead of training one from the config.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub decode: DecodeFlags,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    /// Trace files written by `generate`.
    #[arg(required = true)]
    pub traces: Vec<PathBuf>,
    /// Top-set size; defaults to the size logged with each step.
    #[arg(long)]
    pub overlap_k: Option<usize>,
    /// Largest accepted gap between recomputed and logged ratios.
    #[arg(long, default_value_t = 1e-12)]
    pub tolerance: f64,
}

#[derive(Debug, Args)]
pub struct ToyArgs {
    #[arg(long, default_value_t = 5000)]
    pub docs_per_class: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(status) => status,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
