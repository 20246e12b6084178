use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nrmf::baselines::{tune_bm25f, tune_interpolation, BaselineIndex, Bm25Params};
use nrmf::corpus::{
    generate_synthetic, load_corpus, load_splits, save_corpus, save_splits, split, Corpus,
    Document, Field, Splits, SPLITS_FILE,
};
use nrmf::diagnostics::gradient_suite;
use nrmf::evaluation::{
    compare_reports, evaluate_run, learning_curve, learning_curve_csv, load_report, ranked_lists,
    save_report, save_run, score_split, MetricReport, RunEntry, DEFAULT_SHUFFLES,
};
use nrmf::experiment::without_field;
use nrmf::model::{load_checkpoint, save_checkpoint, Model, ModelConfig};
use nrmf::training::{loss_curve_csv, train, PreparedSplit, TrainConfig, TrainOutcome};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use nrmf_cli::config::{Ablations, RunConfig};

/// BM25F field weights searched by `eval --baseline bm25f`.
const BM25F_WEIGHTS: [f64; 4] = [0.0, 0.5, 1.0, 2.0];
/// Simplex resolution for `eval --baseline interpolated`.
const MIXING_STEPS: usize = 4;

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn load_data(cfg: &RunConfig) -> Result<(Corpus, Splits)> {
    let corpus = load_corpus(cfg.corpus_dir()?)?;
    let splits = load_splits(&cfg.splits_path()?)?;
    Ok((corpus, splits))
}

fn split_ids<'a>(splits: &'a Splits, name: &str) -> Result<&'a [String]> {
    match name {
        "train" => Ok(&splits.train),
        "valid" => Ok(&splits.valid),
        "test" => Ok(&splits.test),
        other => bail!("unknown split {other:?} (expected train, valid or test)"),
    }
}

pub fn gen_data(cfg: &RunConfig, seed: u64, queries: Option<usize>, out: &Path) -> Result<()> {
    let mut syn = cfg.synthetic.clone();
    syn.seed = seed;
    if let Some(q) = queries {
        syn.queries = q;
    }
    let corpus = generate_synthetic(&syn)?.corpus;
    let ids: Vec<&str> = corpus.queries.iter().map(|q| q.id.as_str()).collect();
    let splits = split(&ids, cfg.split_ratios, seed)?;
    create_dir(out)?;
    save_corpus(&corpus, out)?;
    save_splits(&splits, &out.join(SPLITS_FILE))?;
    println!(
        "wrote {} queries, {} documents to {} (splits {}/{}/{})",
        corpus.queries.len(),
        corpus.documents.len(),
        out.display(),
        splits.train.len(),
        splits.valid.len(),
        splits.test.len()
    );
    Ok(())
}

fn model_config(cfg: &RunConfig, ablations: &Ablations) -> Result<ModelConfig> {
    let mut m = cfg.model.clone();
    ablations.apply(&mut m)?;
    Ok(m)
}

fn train_one(
    corpus: &Corpus,
    splits: &Splits,
    model: ModelConfig,
    cfg: &RunConfig,
    train_cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    let init = Model::new(model, seed)?;
    let tr = PreparedSplit::new(&init, corpus, &splits.train)?;
    let va = PreparedSplit::new(&init, corpus, &splits.valid)?;
    Ok(train(init, &tr, &va, &cfg.loss, train_cfg, seed)?)
}

pub fn train_cmd(
    cfg: &RunConfig,
    ablations: &Ablations,
    seed: u64,
    grid: bool,
    out: &Path,
) -> Result<()> {
    let (corpus, splits) = load_data(cfg)?;
    let base = model_config(cfg, ablations)?;
    create_dir(out)?;

    let outcome = if grid {
        let candidates = cfg.grid.candidates(&base, &cfg.train)?;
        let mut rows = String::from(
            "candidate,learning_rate,layer_size,body_window,short_window,keep_prob,best_valid_loss\n",
        );
        let mut best: Option<TrainOutcome> = None;
        for (i, c) in candidates.iter().enumerate() {
            let o = train_one(&corpus, &splits, c.model.clone(), cfg, &c.train, seed)?;
            let body = c
                .model
                .field_config(Field::Body)
                .map_or(0, |f| f.encoder.conv1_window);
            rows.push_str(&format!(
                "{i},{},{},{body},{},{},{}\n",
                c.train.learning_rate,
                c.model.matching_hidden_dim,
                c.model.query.conv1_window,
                c.model.dropout_keep,
                o.best_valid_loss
            ));
            eprintln!(
                "candidate {i}/{}: valid loss {:.6}",
                candidates.len(),
                o.best_valid_loss
            );
            if best
                .as_ref()
                .is_none_or(|b| o.best_valid_loss < b.best_valid_loss)
            {
                best = Some(o);
            }
        }
        write(&out.join("grid.csv"), rows)?;
        best.context("hyperparameter grid produced no candidate")?
    } else {
        train_one(&corpus, &splits, base, cfg, &cfg.train, seed)?
    };

    save_checkpoint(&outcome.best, &out.join("model.json"))?;
    write(&out.join("loss.csv"), loss_curve_csv(&outcome.curve))?;
    if !outcome.checkpoints.is_empty() {
        let dir = out.join("checkpoints");
        create_dir(&dir)?;
        for c in &outcome.checkpoints {
            save_checkpoint(
                &c.model,
                &dir.join(format!("ckpt-{:09}.json", c.instances_seen)),
            )?;
        }
        let test = PreparedSplit::new(&outcome.best, &corpus, &splits.test)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let curve = learning_curve(
            &outcome.checkpoints,
            &test,
            &corpus,
            DEFAULT_SHUFFLES,
            &mut rng,
        )?;
        write(&out.join("learning_curve.csv"), learning_curve_csv(&curve))?;
    }
    println!(
        "best epoch {} of {} (valid loss {:.6}); wrote {}",
        outcome.best_epoch,
        outcome.epochs_run,
        outcome.best_valid_loss,
        out.display()
    );
    Ok(())
}

/// What `eval` ranks with.
#[derive(Clone, Debug)]
pub enum Ranker {
    Model(PathBuf),
    Bm25,
    Bm25f,
    Interpolated,
    Field(Field),
}

impl std::str::FromStr for Ranker {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "bm25" => Ok(Ranker::Bm25),
            "bm25f" => Ok(Ranker::Bm25f),
            "interpolated" => Ok(Ranker::Interpolated),
            _ => match s.strip_prefix("bm25:") {
                Some(f) => f.parse().map(Ranker::Field).map_err(|e| format!("{e}")),
                None => Err(format!(
                    "unknown baseline {s:?} (bm25, bm25f, interpolated or bm25:<field>)"
                )),
            },
        }
    }
}

fn baseline_run(
    ranker: &Ranker,
    corpus: &Corpus,
    splits: &Splits,
    ids: &[String],
    seed: u64,
) -> Result<Vec<RunEntry>> {
    let index = BaselineIndex::new(corpus)?;
    let params = Bm25Params::default();
    Ok(match ranker {
        Ranker::Bm25 => index.bm25_run(corpus, ids, params)?,
        Ranker::Field(f) => index.field_bm25_run(corpus, ids, *f, params)?,
        Ranker::Bm25f => {
            let (w, ndcg) = tune_bm25f(&index, corpus, &splits.valid, &BM25F_WEIGHTS, seed)?;
            let weights: Vec<String> = w
                .fields
                .iter()
                .map(|f| format!("{}={}", f.field, f.weight))
                .collect();
            eprintln!(
                "bm25f weights {} (valid NDCG@10 {ndcg:.4})",
                weights.join(" ")
            );
            index.bm25f_run(corpus, ids, &w)?
        }
        Ranker::Interpolated => {
            let (mix, ndcg) =
                tune_interpolation(&index, corpus, &splits.valid, MIXING_STEPS, params, seed)?;
            eprintln!("mixing {mix:?} (valid NDCG@10 {ndcg:.4})");
            index.interpolated_run(corpus, ids, &mix, params)?
        }
        Ranker::Model(_) => unreachable!("models are scored separately"),
    })
}

pub fn eval_cmd(
    cfg: &RunConfig,
    ranker: Ranker,
    split_name: &str,
    remove: &[Field],
    seed: u64,
    out: &Path,
) -> Result<()> {
    let (mut corpus, splits) = load_data(cfg)?;
    for &f in remove {
        corpus = without_field(&corpus, f);
    }
    let ids = split_ids(&splits, split_name)?;
    let run = match &ranker {
        Ranker::Model(path) => {
            let model = load_checkpoint(path)?;
            let data = PreparedSplit::new(&model, &corpus, ids)?;
            score_split(&model, &data, &corpus)?
        }
        other => baseline_run(other, &corpus, &splits, ids, seed)?,
    };
    let lists = ranked_lists(&run, &corpus, ids)?;
    let report = evaluate_run(
        &lists,
        DEFAULT_SHUFFLES,
        &mut ChaCha8Rng::seed_from_u64(seed),
    );
    create_dir(out)?;
    save_run(&run, &out.join("run.tsv"))?;
    save_report(&report, &out.join("report.json"))?;
    write(&out.join("report.csv"), report.to_csv())?;
    println!(
        "{} queries: NDCG@1 {:.4} NDCG@10 {:.4}",
        report.per_query.len(),
        report.mean_ndcg1,
        report.mean_ndcg10
    );
    Ok(())
}

pub fn gradcheck_cmd(seed: u64, trials: usize, threshold: f64, out: Option<&Path>) -> Result<()> {
    let results = gradient_suite(seed, trials, 1e-5)?;
    let mut worst: f64 = 0.0;
    println!(
        "{:<28} {:>12} {:>14}",
        "check", "coordinates", "max rel error"
    );
    for r in &results {
        println!(
            "{:<28} {:>12} {:>14.3e}",
            r.name, r.coordinates_checked, r.max_relative_error
        );
        worst = worst.max(r.max_relative_error);
    }
    println!("max relative error {worst:.3e}");
    if let Some(dir) = out {
        create_dir(dir)?;
        write(
            &dir.join("gradcheck.json"),
            serde_json::to_string_pretty(&results)? + "\n",
        )?;
    }
    if !(worst < threshold) {
        bail!("max relative error {worst:.3e} is not below {threshold:e}");
    }
    Ok(())
}

pub fn score_cmd(model_path: &Path, query: &str, doc: Document, out: Option<&Path>) -> Result<()> {
    let model = load_checkpoint(model_path)?;
    let q = model.prepare_query("query", query)?;
    let d = model.prepare_document(&doc);
    let score = model.score(&q, &d)?;
    println!("{score}");
    if let Some(dir) = out {
        create_dir(dir)?;
        write(&dir.join("score.txt"), format!("{score}\n"))?;
    }
    Ok(())
}

pub fn find_document(cfg: &RunConfig, id: &str) -> Result<Document> {
    let corpus = load_corpus(cfg.corpus_dir()?)?;
    corpus
        .documents
        .into_iter()
        .find(|d| d.id == id)
        .with_context(|| format!("document {id} not in corpus"))
}

pub fn compare_cmd(a: &Path, b: &Path, names: (&str, &str), out: Option<&Path>) -> Result<()> {
    let ra: MetricReport = load_report(a)?;
    let rb: MetricReport = load_report(b)?;
    let table = compare_reports(&ra, &rb)?.summary(names.0, names.1);
    print!("{table}");
    if let Some(dir) = out {
        create_dir(dir)?;
        write(&dir.join("comparison.txt"), table)?;
    }
    Ok(())
}
