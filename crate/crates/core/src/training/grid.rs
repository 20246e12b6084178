use serde::{Deserialize, Serialize};

use super::trainer::TrainConfig;
use crate::corpus::Field;
use crate::error::{Error, Result};
use crate::model::{allowed_strides, ModelConfig};

/// Hyperparameter search space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperGrid {
    pub learning_rates: Vec<f64>,
    /// Used for convolution channels, field output dims and the matching layer.
    pub layer_sizes: Vec<usize>,
    pub body_windows: Vec<usize>,
    /// Windows for every field other than the body, and for the query.
    pub short_windows: Vec<usize>,
    pub keep_probs: Vec<f64>,
}

impl Default for HyperGrid {
    fn default() -> Self {
        HyperGrid {
            learning_rates: vec![1e-3, 5e-4, 1e-4, 5e-5, 1e-5],
            layer_sizes: vec![100, 300, 500],
            body_windows: vec![1, 3, 10, 20, 50],
            short_windows: vec![1, 3, 5, 10],
            keep_probs: vec![0.5, 0.8, 1.0],
        }
    }
}

/// One point of the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl HyperGrid {
    fn validate(&self) -> Result<()> {
        if self.learning_rates.is_empty()
            || self.layer_sizes.is_empty()
            || self.body_windows.is_empty()
            || self.short_windows.is_empty()
            || self.keep_probs.is_empty()
        {
            return Err(Error::config("every grid axis needs at least one value"));
        }
        Ok(())
    }

    /// Every combination of the axes applied to `base`. Strides range over
    /// `{1, ws/4, ws/2, ws}` of the body window (shared by both layers);
    /// combinations whose windows do not fit the token caps are left out.
    pub fn candidates(&self, base: &ModelConfig, train: &TrainConfig) -> Result<Vec<Candidate>> {
        self.validate()?;
        let mut out = Vec::new();
        for &lr in &self.learning_rates {
            for &size in &self.layer_sizes {
                for &body_ws in &self.body_windows {
                    for stride in allowed_strides(body_ws) {
                        for &short_ws in &self.short_windows {
                            for &keep in &self.keep_probs {
                                let mut m = base.clone();
                                m.matching_hidden_dim = size;
                                m.dropout_keep = keep;
                                for f in &mut m.fields {
                                    f.output_dim = size;
                                    f.encoder.channels = size;
                                    let (ws, s) = if f.field == Field::Body {
                                        (body_ws, stride)
                                    } else {
                                        (short_ws, 1)
                                    };
                                    f.encoder.conv1_window = ws;
                                    f.encoder.conv2_window = ws;
                                    f.encoder.conv1_stride = s;
                                    f.encoder.conv2_stride = s;
                                }
                                m.query.channels = size;
                                m.query.conv1_window = short_ws;
                                m.query.conv2_window = short_ws;
                                m.query.conv1_stride = 1;
                                m.query.conv2_stride = 1;
                                if m.validate().is_err() {
                                    continue;
                                }
                                out.push(Candidate {
                                    model: m,
                                    train: TrainConfig {
                                        learning_rate: lr,
                                        ..train.clone()
                                    },
                                });
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}
