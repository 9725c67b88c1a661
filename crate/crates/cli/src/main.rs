use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use senselab::neural::Variant;
use senselab::pipeline::{self, Asset, PipelineConfig, TermSelection, Workspace};

/// Abbreviation sense disambiguation pipeline.
#[derive(Parser, Debug)]
#[command(name = "senselab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON pipeline configuration; defaults apply to missing fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Workspace root that holds data, assets, models and reports.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the synthetic dataset and pre-training corpus.
    Generate,
    /// Train a pre-trained asset: lda, embeddings, bilm, topic-matrix or all.
    Pretrain { asset: String },
    /// Train one classifier variant per term.
    Train {
        #[arg(long)]
        variant: Variant,
        #[arg(long, conflicts_with = "all_terms")]
        term: Option<String>,
        #[arg(long)]
        all_terms: bool,
    },
    /// Score trained models on the test split.
    Evaluate {
        #[arg(long)]
        variant: Variant,
    },
    /// Run generate, pretrain, train and evaluate for every variant.
    Benchmark {
        #[arg(long, default_value_t = 1)]
        seeds: usize,
        /// Restrict to these variants (repeatable).
        #[arg(long)]
        variant: Vec<Variant>,
    },
    /// Print the effective configuration as JSON.
    Config,
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(p) => PipelineConfig::read(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let ws = Workspace::new(cli.out, config);
    match cli.command {
        Command::Generate => pipeline::cmd_generate(&ws)?,
        Command::Pretrain { asset } => {
            let assets = if asset == "all" { Asset::ALL.to_vec() } else { vec![asset.parse()?] };
            for a in assets {
                pipeline::cmd_pretrain(&ws, a)?;
            }
        }
        Command::Train { variant, term, all_terms } => {
            let terms = match (term, all_terms) {
                (Some(t), false) => TermSelection::One(t),
                (None, true) => TermSelection::All,
                _ => bail!("pass either --term <TERM> or --all-terms"),
            };
            pipeline::cmd_train(&ws, variant, &terms)?;
        }
        Command::Evaluate { variant } => {
            let report = pipeline::cmd_evaluate(&ws, variant)?;
            print!("{}", report.summary_csv());
        }
        Command::Benchmark { seeds, variant } => {
            let mut ws = ws;
            if !variant.is_empty() {
                ws.config.variants = variant;
            }
            let report = pipeline::cmd_benchmark(&ws, seeds).context("benchmark failed")?;
            print!("{}", report.to_csv());
        }
        Command::Config => println!("{}", serde_json::to_string_pretty(&ws.config)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
