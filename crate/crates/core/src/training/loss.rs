use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::corpus::Grade;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Gain is `gain_base^y - 1`.
    pub gain_base: f64,
    pub batch_size: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            gain_base: 2.0,
            batch_size: 64,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gain_base > 1.0) {
            return Err(Error::config(format!(
                "gain_base {} must exceed 1 for a strictly increasing gain",
                self.gain_base
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        Ok(())
    }

    pub fn gain(&self, y: Grade) -> f64 {
        self.gain_base.powi(i32::from(y)) - 1.0
    }

    /// Per-document weights `g(y_j) / (g(y1) + g(y2))`.
    pub fn weights(&self, y1: Grade, y2: Grade) -> Result<(f64, f64)> {
        if y1 == y2 {
            return Err(Error::data(format!("triple with equal grades {y1}")));
        }
        let (g1, g2) = (self.gain(y1), self.gain(y2));
        let z = g1 + g2;
        Ok((g1 / z, g2 / z))
    }
}

/// Gain `2^y - 1`.
pub fn gain(y: Grade) -> f64 {
    LossConfig::default().gain(y)
}

/// Loss of one scored triple, computed without a tape.
pub fn pair_loss_value(s1: f64, s2: f64, y1: Grade, y2: Grade, cfg: &LossConfig) -> Result<f64> {
    let (w1, w2) = cfg.weights(y1, y2)?;
    let m = s1.max(s2);
    let lse = m + ((s1 - m).exp() + (s2 - m).exp()).ln();
    Ok(-(w1 * (s1 - lse) + w2 * (s2 - lse)))
}

/// A scored triple on a tape.
#[derive(Clone, Copy, Debug)]
pub struct ScoredPair {
    pub s1: Var,
    pub s2: Var,
    pub y1: Grade,
    pub y2: Grade,
}

/// Mean weighted cross-entropy over a batch of scored triples.
pub fn pairwise_loss(tape: &mut Tape<'_>, batch: &[ScoredPair], cfg: &LossConfig) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::data("empty batch"));
    }
    let mut total: Option<Var> = None;
    for p in batch {
        let (w1, w2) = cfg.weights(p.y1, p.y2)?;
        let l = tape.pair_loss(p.s1, p.s2, w1, w2)?;
        total = Some(match total {
            None => l,
            Some(t) => tape.add(t, l)?,
        });
    }
    Ok(tape.scale(total.unwrap(), 1.0 / batch.len() as f64))
}
