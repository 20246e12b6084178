use serde::{Deserialize, Serialize};

use crate::autodiff::PoolKind;
use crate::corpus::Field;
use crate::error::{Error, Result};
use crate::text::TRIGRAM_DIM;

/// Convolutional encoder hyperparameters shared by field and query towers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvConfig {
    pub max_tokens: usize,
    pub conv1_window: usize,
    pub conv1_stride: usize,
    pub conv2_window: usize,
    pub conv2_stride: usize,
    pub channels: usize,
    pub pooling: PoolKind,
    /// Average pooling over the rows that cover real tokens only, instead of
    /// the full fixed-length sequence.
    #[serde(default)]
    pub avg_pool_excludes_padding: bool,
}

/// Allowed strides for a window: `{1, ws/4, ws/2, ws}` (floored, zeros dropped).
pub fn allowed_strides(window: usize) -> Vec<usize> {
    let mut s: Vec<usize> = [1, window / 4, window / 2, window]
        .into_iter()
        .filter(|&x| x >= 1)
        .collect();
    s.sort_unstable();
    s.dedup();
    s
}

impl ConvConfig {
    pub fn new(max_tokens: usize, window: usize, channels: usize) -> Self {
        ConvConfig {
            max_tokens,
            conv1_window: window,
            conv1_stride: 1,
            conv2_window: window,
            conv2_stride: 1,
            channels,
            pooling: PoolKind::Max,
            avg_pool_excludes_padding: false,
        }
    }

    /// Rows after the first and second convolution.
    pub fn conv_lengths(&self) -> Result<(usize, usize)> {
        let out = |len: usize, ws: usize, stride: usize, layer: &str| {
            if len < ws {
                Err(Error::config(format!(
                    "{layer}: window {ws} does not fit {len} input rows"
                )))
            } else {
                Ok((len - ws) / stride + 1)
            }
        };
        let l1 = out(
            self.max_tokens,
            self.conv1_window,
            self.conv1_stride,
            "conv1",
        )?;
        let l2 = out(l1, self.conv2_window, self.conv2_stride, "conv2")?;
        Ok((l1, l2))
    }

    /// Conv2 output rows whose receptive field touches at least one of the
    /// first `true_length` tokens (at least one row).
    pub fn covered_rows(&self, true_length: usize) -> usize {
        let (l1, l2) = self.conv_lengths().expect("validated");
        let r1 = true_length.div_ceil(self.conv1_stride).min(l1);
        r1.div_ceil(self.conv2_stride).min(l2).max(1)
    }

    fn validate(&self, owner: &str) -> Result<()> {
        if self.max_tokens == 0 || self.channels == 0 {
            return Err(Error::config(format!(
                "{owner}: max_tokens and channels must be positive"
            )));
        }
        for (ws, stride, layer) in [
            (self.conv1_window, self.conv1_stride, "conv1"),
            (self.conv2_window, self.conv2_stride, "conv2"),
        ] {
            if ws == 0 {
                return Err(Error::config(format!(
                    "{owner}: {layer} window must be positive"
                )));
            }
            if !allowed_strides(ws).contains(&stride) {
                return Err(Error::config(format!(
                    "{owner}: {layer} stride {stride} not in {:?} for window {ws}",
                    allowed_strides(ws)
                )));
            }
        }
        self.conv_lengths()
            .map(|_| ())
            .map_err(|e| Error::config(format!("{owner}: {e}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldConfig {
    pub field: Field,
    pub max_instances: usize,
    pub encoder: ConvConfig,
    pub output_dim: usize,
    /// Probability of keeping the whole field during training.
    #[serde(default = "one")]
    pub keep_prob: f64,
}

fn one() -> f64 {
    1.0
}

impl FieldConfig {
    /// Defaults: instance caps of 1 (5 for anchors and clicked queries) and
    /// token caps of 20, 10, 1000, 10, 10.
    pub fn standard(field: Field, window: usize, channels: usize, output_dim: usize) -> Self {
        let (max_instances, max_tokens) = match field {
            Field::Title => (1, 20),
            Field::Url => (1, 10),
            Field::Body => (1, 1000),
            Field::Anchors => (5, 10),
            Field::ClickedQueries => (5, 10),
        };
        FieldConfig {
            field,
            max_instances,
            encoder: ConvConfig::new(max_tokens, window, channels),
            output_dim,
            keep_prob: 1.0,
        }
    }
}

/// How the query representation is laid out against the field slices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryMode {
    /// One learned slice per field; total width `Σ D_i`.
    PerField,
    /// One vector of width `D` repeated for every field (all `D_i` equal).
    Shared,
}

/// How field evidence is combined into a score.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scoring {
    /// One matching network over the concatenated document representation.
    Joint,
    /// One matching network per field, mixed by learned convex weights.
    ScoreAggregation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub fields: Vec<FieldConfig>,
    pub trigram_dim: usize,
    pub embed_dim: usize,
    pub query: ConvConfig,
    pub matching_hidden_dim: usize,
    /// Keep probability of the dropout on every encoder's dense output.
    pub dropout_keep: f64,
    /// Divide by the number of present instances and zero missing ones; when
    /// off, every slot (padding included) is averaged over `M_i`.
    pub masking: bool,
    pub query_mode: QueryMode,
    pub scoring: Scoring,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            fields: Field::ALL
                .iter()
                .map(|&f| FieldConfig::standard(f, 3, 300, 100))
                .collect(),
            trigram_dim: TRIGRAM_DIM,
            embed_dim: 300,
            query: ConvConfig::new(10, 3, 300),
            matching_hidden_dim: 300,
            dropout_keep: 0.8,
            masking: true,
            query_mode: QueryMode::PerField,
            scoring: Scoring::Joint,
        }
    }
}

impl ModelConfig {
    /// Narrow layers and short token caps for quick desk-scale runs.
    pub fn compact() -> Self {
        let dims = 16;
        let fields = Field::ALL
            .iter()
            .map(|&f| {
                let mut fc = FieldConfig::standard(f, 3, dims, 8);
                fc.encoder.max_tokens = match f {
                    Field::Body => 40,
                    Field::Anchors | Field::ClickedQueries => 6,
                    _ => 8,
                };
                if f.is_multi_instance() {
                    fc.max_instances = 3;
                }
                fc
            })
            .collect();
        ModelConfig {
            fields,
            embed_dim: dims,
            query: ConvConfig::new(8, 3, dims),
            matching_hidden_dim: dims,
            dropout_keep: 1.0,
            ..ModelConfig::default()
        }
    }

    /// The compact layout widened to 32 units everywhere with dense dropout
    /// 0.5: the setting used for full synthetic-corpus runs.
    pub fn desk_scale() -> Self {
        let dims = 32;
        let mut c = ModelConfig::compact();
        c.embed_dim = dims;
        c.query.channels = dims;
        c.matching_hidden_dim = dims;
        c.dropout_keep = 0.5;
        for f in &mut c.fields {
            f.encoder.channels = dims;
            f.output_dim = dims;
        }
        c
    }

    /// Keeps only the listed fields, in canonical order.
    pub fn with_fields(mut self, keep: &[Field]) -> Self {
        self.fields.retain(|f| keep.contains(&f.field));
        self
    }

    pub fn field_config(&self, field: Field) -> Option<&FieldConfig> {
        self.fields.iter().find(|f| f.field == field)
    }

    pub fn doc_dim(&self) -> usize {
        self.fields.iter().map(|f| f.output_dim).sum()
    }

    /// Width of the query tower's final projection.
    pub fn query_dim(&self) -> usize {
        match self.query_mode {
            QueryMode::PerField => self.doc_dim(),
            QueryMode::Shared => self.fields.first().map_or(0, |f| f.output_dim),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.fields.is_empty() {
            return Err(Error::config("model needs at least one field"));
        }
        for (i, f) in self.fields.iter().enumerate() {
            if self.fields[..i].iter().any(|g| g.field == f.field) {
                return Err(Error::config(format!("field {} configured twice", f.field)));
            }
            if f.max_instances == 0 || f.output_dim == 0 {
                return Err(Error::config(format!(
                    "{}: max_instances and output_dim must be positive",
                    f.field
                )));
            }
            if !(f.keep_prob > 0.0 && f.keep_prob <= 1.0) {
                return Err(Error::config(format!(
                    "{}: keep_prob {} must lie in (0, 1]",
                    f.field, f.keep_prob
                )));
            }
            f.encoder.validate(f.field.name())?;
        }
        self.query.validate("query")?;
        if self.trigram_dim != TRIGRAM_DIM {
            return Err(Error::config(format!(
                "trigram_dim must be {TRIGRAM_DIM}, got {}",
                self.trigram_dim
            )));
        }
        if self.embed_dim == 0 || self.matching_hidden_dim == 0 {
            return Err(Error::config(
                "embed_dim and matching_hidden_dim must be positive",
            ));
        }
        if !(self.dropout_keep > 0.0 && self.dropout_keep <= 1.0) {
            return Err(Error::config(format!(
                "dropout_keep {} must lie in (0, 1]",
                self.dropout_keep
            )));
        }
        if self.query_mode == QueryMode::Shared {
            let d = self.fields[0].output_dim;
            if self.fields.iter().any(|f| f.output_dim != d) {
                return Err(Error::config(
                    "a shared query representation needs equal field output dims",
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stride_sets() {
        assert_eq!(allowed_strides(1), [1]);
        assert_eq!(allowed_strides(3), [1, 3]);
        assert_eq!(allowed_strides(10), [1, 2, 5, 10]);
        assert_eq!(allowed_strides(50), [1, 12, 25, 50]);
    }

    #[test]
    fn conv_lengths_and_errors() {
        let mut c = ConvConfig::new(10, 3, 4);
        assert_eq!(c.conv_lengths().unwrap(), (8, 6));
        c.conv1_stride = 3;
        assert_eq!(c.conv_lengths().unwrap(), (3, 1));
        c.max_tokens = 4;
        c.conv1_stride = 1;
        assert!(c.conv_lengths().is_err());
    }

    #[test]
    fn covered_rows_track_true_length() {
        let c = ConvConfig::new(10, 3, 4);
        assert_eq!(c.covered_rows(0), 1);
        assert_eq!(c.covered_rows(4), 4);
        assert_eq!(c.covered_rows(10), 6);
    }

    #[test]
    fn default_config_is_valid() {
        ModelConfig::default().validate().unwrap();
        ModelConfig::compact().validate().unwrap();
        ModelConfig::desk_scale().validate().unwrap();
        let c = ModelConfig::default();
        assert_eq!(c.query_dim(), 500);
        assert_eq!(c.fields[2].encoder.max_tokens, 1000);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = ModelConfig::compact();
        c.fields[0].keep_prob = 0.0;
        assert!(c.validate().is_err());

        let mut c = ModelConfig::compact();
        c.fields[1].encoder.conv1_stride = 2;
        assert!(c.validate().is_err());

        let mut c = ModelConfig::compact();
        c.query_mode = QueryMode::Shared;
        c.fields[0].output_dim = 5;
        assert!(c.validate().is_err());

        let mut c = ModelConfig::compact();
        c.fields[0].encoder.max_tokens = 3;
        assert!(c.validate().is_err());
    }
}
