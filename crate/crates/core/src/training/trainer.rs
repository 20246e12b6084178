use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::data::{IndexedTriple, PreparedSplit, QueryTriples};
use super::loss::{pair_loss_value, pairwise_loss, LossConfig, ScoredPair};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::model::{DocRepr, Mode, Model};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Epochs without a new lowest validation loss before stopping.
    pub patience: usize,
    pub triples_per_query: usize,
    /// Snapshot the model every this many training instances.
    pub checkpoint_every: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            max_epochs: 20,
            patience: 3,
            triples_per_query: 50,
            checkpoint_every: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate must be positive"));
        }
        if self.max_epochs == 0 || self.triples_per_query == 0 {
            return Err(Error::config(
                "max_epochs and triples_per_query must be positive",
            ));
        }
        if self.checkpoint_every == Some(0) {
            return Err(Error::config("checkpoint_every must be positive"));
        }
        Ok(())
    }
}

/// One row of the loss curve; validation loss is filled on the last step of
/// each epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct LossRow {
    pub step: u64,
    pub train_loss: f64,
    pub valid_loss: Option<f64>,
}

pub fn loss_curve_csv(rows: &[LossRow]) -> String {
    let mut out = String::from("step,train_loss,valid_loss\n");
    for r in rows {
        let valid = r.valid_loss.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{}\n", r.step, r.train_loss, valid));
    }
    out
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub instances_seen: usize,
    pub model: Model,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters at the epoch with the lowest validation loss.
    pub best: Model,
    pub best_epoch: usize,
    pub best_valid_loss: f64,
    pub epochs_run: usize,
    pub curve: Vec<LossRow>,
    pub checkpoints: Vec<Checkpoint>,
}

/// Applies Adam updates from batches of triples.
pub struct Trainer {
    pub model: Model,
    pub adam: AdamState,
    pub loss: LossConfig,
    seed: u64,
}

impl Trainer {
    pub fn new(model: Model, learning_rate: f64, loss: LossConfig, seed: u64) -> Result<Self> {
        loss.validate()?;
        let adam = AdamState::new(
            AdamConfig {
                learning_rate,
                ..AdamConfig::default()
            },
            &model.params,
        );
        Ok(Trainer {
            model,
            adam,
            loss,
            seed,
        })
    }

    /// Dropout randomness for the next step, derived from the seed and step.
    fn step_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.adam.step_count() + 1);
        rng
    }

    /// Forward, backward and one Adam update; returns the batch loss.
    ///
    /// Every query, document and query-document score in the batch is
    /// computed once and shared by the triples that use it.
    pub fn step(&mut self, data: &PreparedSplit, batch: &[IndexedTriple]) -> Result<f64> {
        let rng = self.step_rng();
        let model = &self.model;
        let grads = {
            let mut tape = Tape::new(&model.params);
            let mut pass = model.pass(Mode::Train, Some(rng));
            let mut queries: HashMap<usize, Var> = HashMap::new();
            let mut docs: HashMap<usize, DocRepr> = HashMap::new();
            let mut scores: HashMap<(usize, usize), Var> = HashMap::new();
            let mut pairs = Vec::with_capacity(batch.len());
            for t in batch {
                let mut s = [None; 2];
                for (k, d) in [t.doc1, t.doc2].into_iter().enumerate() {
                    if let Some(&v) = scores.get(&(t.query, d)) {
                        s[k] = Some(v);
                        continue;
                    }
                    let q = match queries.get(&t.query) {
                        Some(&q) => q,
                        None => {
                            let q = pass.query(&mut tape, &data.queries[t.query])?;
                            queries.insert(t.query, q);
                            q
                        }
                    };
                    if !docs.contains_key(&d) {
                        let r = pass.document(&mut tape, &data.docs[d])?;
                        docs.insert(d, r);
                    }
                    let v = pass.score(&mut tape, q, &docs[&d])?;
                    scores.insert((t.query, d), v);
                    s[k] = Some(v);
                }
                pairs.push(ScoredPair {
                    s1: s[0].unwrap(),
                    s2: s[1].unwrap(),
                    y1: t.y1,
                    y2: t.y2,
                });
            }
            let loss = pairwise_loss(&mut tape, &pairs, &self.loss)?;
            let value = tape.value(loss).item()?;
            (tape.backward(loss)?.params, value)
        };
        let (grads, value) = grads;
        self.adam.step(&mut self.model.params, &grads);
        Ok(value)
    }
}

/// Mean eval-mode loss over the given triples.
pub fn evaluate_loss(
    model: &Model,
    data: &PreparedSplit,
    triples: &[QueryTriples],
    loss: &LossConfig,
) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for group in triples {
        let q = &data.queries[group.query];
        let docs: Vec<usize> = data.judged[group.query].iter().map(|&(d, _)| d).collect();
        let prepared: Vec<_> = docs.iter().map(|&d| data.docs[d].clone()).collect();
        let scores = model.score_all(q, &prepared)?;
        let score_of: HashMap<usize, f64> = docs.into_iter().zip(scores).collect();
        for t in &group.triples {
            total += pair_loss_value(score_of[&t.doc1], score_of[&t.doc2], t.y1, t.y2, loss)?;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::data("no validation triples"));
    }
    Ok(total / n as f64)
}

/// Trains with early stopping on validation loss and keeps the best model.
pub fn train(
    model: Model,
    train_data: &PreparedSplit,
    valid_data: &PreparedSplit,
    loss: &LossConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_triples = train_data.sample_triples(cfg.triples_per_query, &mut rng);
    if train_triples.is_empty() {
        return Err(Error::data("training split yields no triples"));
    }
    let valid_triples = valid_data.sample_triples(cfg.triples_per_query, &mut rng);
    if valid_triples.is_empty() {
        return Err(Error::data("validation split yields no triples"));
    }

    let mut trainer = Trainer::new(model, cfg.learning_rate, loss.clone(), seed)?;
    let mut best = trainer.model.clone();
    let mut best_loss = evaluate_loss(&best, valid_data, &valid_triples, loss)?;
    let mut best_epoch = 0;
    let mut curve = Vec::new();
    let mut checkpoints = Vec::new();
    let mut seen = 0usize;
    let mut next_checkpoint = cfg.checkpoint_every;
    let mut epochs_run = 0;
    let mut stale = 0;

    for epoch in 1..=cfg.max_epochs {
        train_triples.shuffle(&mut rng);
        let order: Vec<IndexedTriple> = train_triples
            .iter()
            .flat_map(|g| g.triples.iter().copied())
            .collect();
        for batch in order.chunks(loss.batch_size) {
            let value = trainer.step(train_data, batch)?;
            seen += batch.len();
            curve.push(LossRow {
                step: trainer.adam.step_count(),
                train_loss: value,
                valid_loss: None,
            });
            while let Some(at) = next_checkpoint.filter(|&at| seen >= at) {
                checkpoints.push(Checkpoint {
                    instances_seen: at,
                    model: trainer.model.clone(),
                });
                next_checkpoint = Some(at + cfg.checkpoint_every.unwrap());
            }
        }
        epochs_run = epoch;
        let valid = evaluate_loss(&trainer.model, valid_data, &valid_triples, loss)?;
        curve.last_mut().unwrap().valid_loss = Some(valid);
        if valid < best_loss {
            best_loss = valid;
            best_epoch = epoch;
            best = trainer.model.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        best,
        best_epoch,
        best_valid_loss: best_loss,
        epochs_run,
        curve,
        checkpoints,
    })
}
