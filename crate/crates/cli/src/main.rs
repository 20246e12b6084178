//! `nrmf`: generate corpora, train and evaluate multi-field rankers, check
//! gradients and compare metric reports.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use nrmf::corpus::{Document, Field};

use crate::commands::Ranker;
use nrmf_cli::config::{Ablations, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "nrmf", version, about = "Multi-field neural ranking")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice; overrides `seed` in the config.
    #[arg(long, global = true, env = "NRMF_SEED")]
    seed: Option<u64>,
    /// Output directory (gen-data, train and eval default to ./nrmf-out;
    /// other commands write files only when it is given).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Corpus directory; overrides `paths.corpus`.
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    /// Split file; overrides `paths.splits`.
    #[arg(long, global = true)]
    splits: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a seeded synthetic corpus and its train/valid/test split.
    GenData {
        /// Number of queries; overrides `synthetic.queries`.
        #[arg(long)]
        queries: Option<usize>,
    },
    /// Train a model with early stopping on the valid split.
    Train {
        #[command(flatten)]
        ablations: Ablations,
        /// Search the configured hyperparameter grid, keeping the candidate
        /// with the lowest validation loss.
        #[arg(long)]
        grid: bool,
    },
    /// Rank a split with a trained model or a baseline and report NDCG.
    Eval {
        /// Checkpoint to evaluate; overrides `paths.checkpoint`.
        #[arg(long, conflicts_with = "baseline")]
        model: Option<PathBuf>,
        /// bm25, bm25f, interpolated or bm25:<field>.
        #[arg(long)]
        baseline: Option<Ranker>,
        #[arg(long, default_value = "test")]
        split: String,
        /// Empty these fields in every document before scoring.
        #[arg(long, value_delimiter = ',')]
        remove_field: Vec<Field>,
    },
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        /// Randomized op programs to check.
        #[arg(long, default_value_t = 20)]
        trials: usize,
        /// Fail when the largest relative error reaches this value.
        #[arg(long, default_value_t = 1e-4)]
        threshold: f64,
    },
    /// Score one query against one document.
    Score {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        query: String,
        /// Id of a document in the corpus.
        #[arg(long, conflicts_with = "doc_json")]
        doc: Option<String>,
        /// A document as one JSON object, in the documents.jsonl format.
        #[arg(long)]
        doc_json: Option<String>,
    },
    /// Paired comparison of two metric reports.
    Compare {
        report_a: PathBuf,
        /// Defaults to `paths.report`.
        report_b: Option<PathBuf>,
        /// Column labels for the two reports.
        #[arg(long, num_args = 2, default_values = ["A", "B"])]
        names: Vec<String>,
    },
}

/// Output directory of `gen-data`, `train` and `eval` when neither `--out`
/// nor a config path says otherwise.
const DEFAULT_OUT: &str = "nrmf-out";

fn require_seed(seed: Option<u64>) -> Result<u64> {
    seed.context("a seed is required: pass --seed, set NRMF_SEED or set `seed` in the config")
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(c) = cli.corpus {
        cfg.paths.corpus = Some(c);
    }
    if let Some(s) = cli.splits {
        cfg.paths.splits = Some(s);
    }
    let seed = cli.seed.or(cfg.seed);
    let given_out = cli.out;
    let out = given_out
        .clone()
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    match cli.command {
        Command::GenData { queries } => {
            let dir = given_out
                .or(cfg.paths.corpus.clone())
                .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
            commands::gen_data(&cfg, require_seed(seed)?, queries, &dir)
        }
        Command::Train { ablations, grid } => {
            commands::train_cmd(&cfg, &ablations, require_seed(seed)?, grid, &out)
        }
        Command::Eval {
            model,
            baseline,
            split,
            remove_field,
        } => {
            let ranker = match (baseline, model) {
                (Some(b), _) => b,
                (None, Some(m)) => Ranker::Model(m),
                (None, None) => Ranker::Model(cfg.checkpoint_path()?.to_path_buf()),
            };
            commands::eval_cmd(&cfg, ranker, &split, &remove_field, seed.unwrap_or(0), &out)
        }
        Command::Gradcheck { trials, threshold } => {
            commands::gradcheck_cmd(seed.unwrap_or(0), trials, threshold, given_out.as_deref())
        }
        Command::Score {
            model,
            query,
            doc,
            doc_json,
        } => {
            let model = match model {
                Some(m) => m,
                None => cfg.checkpoint_path()?.to_path_buf(),
            };
            let document: Document = match (doc, doc_json) {
                (Some(id), _) => commands::find_document(&cfg, &id)?,
                (None, Some(json)) => serde_json::from_str(&json).context("invalid --doc-json")?,
                (None, None) => bail!("pass --doc <id> or --doc-json <object>"),
            };
            commands::score_cmd(&model, &query, document, given_out.as_deref())
        }
        Command::Compare {
            report_a,
            report_b,
            names,
        } => {
            let b = match report_b.or(cfg.paths.report.clone()) {
                Some(b) => b,
                None => bail!("compare needs two reports (second from paths.report)"),
            };
            commands::compare_cmd(&report_a, &b, (&names[0], &names[1]), given_out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
