//! Train-and-evaluate runs shared by the command line and the acceptance suite.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, Field, Splits};
use crate::error::Result;
use crate::evaluation::{evaluate_run, ranked_lists, score_split, MetricReport, DEFAULT_SHUFFLES};
use crate::model::{Model, ModelConfig};
use crate::training::{train, LossConfig, PreparedSplit, TrainConfig, TrainOutcome};

/// A trained model with its test-split report.
#[derive(Clone, Debug)]
pub struct ModelRun {
    pub outcome: TrainOutcome,
    pub test: MetricReport,
}

/// Initializes a model from `seed`, trains it on the train split with early
/// stopping on the valid split and evaluates the best model on the test split.
pub fn train_and_evaluate(
    corpus: &Corpus,
    splits: &Splits,
    model: &ModelConfig,
    loss: &LossConfig,
    train_cfg: &TrainConfig,
    seed: u64,
) -> Result<ModelRun> {
    let init = Model::new(model.clone(), seed)?;
    let train_data = PreparedSplit::new(&init, corpus, &splits.train)?;
    let valid_data = PreparedSplit::new(&init, corpus, &splits.valid)?;
    let outcome = train(init, &train_data, &valid_data, loss, train_cfg, seed)?;
    let test = evaluate_model(&outcome.best, corpus, &splits.test, seed)?;
    Ok(ModelRun { outcome, test })
}

/// Test report of a model over the listed queries, tie shuffles seeded by `seed`.
pub fn evaluate_model<S: AsRef<str>>(
    model: &Model,
    corpus: &Corpus,
    query_ids: &[S],
    seed: u64,
) -> Result<MetricReport> {
    let data = PreparedSplit::new(model, corpus, query_ids)?;
    let run = score_split(model, &data, corpus)?;
    let lists = ranked_lists(&run, corpus, query_ids)?;
    Ok(evaluate_run(
        &lists,
        DEFAULT_SHUFFLES,
        &mut ChaCha8Rng::seed_from_u64(seed),
    ))
}

/// Copy of the corpus with one field emptied in every document.
pub fn without_field(corpus: &Corpus, field: Field) -> Corpus {
    let mut c = corpus.clone();
    for d in &mut c.documents {
        d.clear_field(field);
    }
    c
}
