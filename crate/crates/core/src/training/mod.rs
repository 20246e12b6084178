//! Pairwise training: triple sampling, the gain-weighted loss and Adam.

mod adam;
mod data;
mod grid;
mod loss;
mod trainer;
mod triples;

pub use adam::{AdamConfig, AdamState};
pub use data::{IndexedTriple, PreparedSplit, QueryTriples};
pub use grid::{Candidate, HyperGrid};
pub use loss::{gain, pair_loss_value, pairwise_loss, LossConfig, ScoredPair};
pub use trainer::{
    evaluate_loss, loss_curve_csv, train, Checkpoint, LossRow, TrainConfig, TrainOutcome, Trainer,
};
pub use triples::{possible_triples, sample_triples, TrainingTriple};

pub use crate::autodiff::pair_probability;
