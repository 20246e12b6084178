use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nrmf::corpus::{Field, SyntheticConfig};
use nrmf::model::{ModelConfig, QueryMode, Scoring};
use nrmf::training::{HyperGrid, LossConfig, TrainConfig};
use serde::{Deserialize, Serialize};

/// File locations; relative paths resolve against the working directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Directory holding documents.jsonl, queries.jsonl and judgments.tsv.
    pub corpus: Option<PathBuf>,
    /// Split file; defaults to `<corpus>/splits.tsv`.
    pub splits: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Metric report (JSON) read by `compare`.
    pub report: Option<PathBuf>,
}

/// Everything a command may need, loaded from one TOML file. Missing
/// sections take their defaults; command-line flags override file values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub paths: Paths,
    /// Train/valid/test shares of the query ids.
    pub split_ratios: [f64; 3],
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub synthetic: SyntheticConfig,
    pub grid: HyperGrid,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            paths: Paths::default(),
            split_ratios: [0.8, 0.1, 0.1],
            model: ModelConfig::desk_scale(),
            loss: LossConfig::default(),
            train: TrainConfig::default(),
            synthetic: SyntheticConfig::default(),
            grid: HyperGrid::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn corpus_dir(&self) -> Result<&Path> {
        match &self.paths.corpus {
            Some(p) => Ok(p),
            None => bail!("no corpus directory: set paths.corpus or pass --corpus"),
        }
    }

    pub fn splits_path(&self) -> Result<PathBuf> {
        match &self.paths.splits {
            Some(p) => Ok(p.clone()),
            None => Ok(self.corpus_dir()?.join(nrmf::corpus::SPLITS_FILE)),
        }
    }

    pub fn checkpoint_path(&self) -> Result<&Path> {
        match &self.paths.checkpoint {
            Some(p) => Ok(p),
            None => bail!("no checkpoint: set paths.checkpoint or pass --model"),
        }
    }
}

/// Ablation switches shared by `train`, `eval` and `gradcheck`.
#[derive(Clone, Debug, Default, clap::Args)]
pub struct Ablations {
    /// Average every instance slot (padding included) instead of masking
    /// missing instances.
    #[arg(long)]
    pub no_masking: bool,
    /// Keep probability for whole-field dropout, as FIELD=P (repeatable).
    #[arg(long, value_name = "FIELD=P", value_parser = parse_field_keep)]
    pub field_dropout: Vec<(Field, f64)>,
    /// Turn off field-level dropout on every field.
    #[arg(long, conflicts_with = "field_dropout")]
    pub no_field_dropout: bool,
    /// One query vector repeated for every field.
    #[arg(long)]
    pub shared_query: bool,
    /// Restrict the model to these fields (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub fields: Vec<Field>,
    #[arg(long, value_enum)]
    pub scoring: Option<ScoringArg>,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
pub enum ScoringArg {
    Joint,
    ScoreAggregation,
}

fn parse_field_keep(s: &str) -> Result<(Field, f64), String> {
    let (f, p) = s.split_once('=').ok_or("expected FIELD=P")?;
    let field: Field = f.parse().map_err(|e| format!("{e}"))?;
    let p: f64 = p.parse().map_err(|e| format!("{e}"))?;
    Ok((field, p))
}

impl Ablations {
    pub fn apply(&self, model: &mut ModelConfig) -> Result<()> {
        if self.no_masking {
            model.masking = false;
        }
        if self.no_field_dropout {
            for f in &mut model.fields {
                f.keep_prob = 1.0;
            }
        }
        for &(field, p) in &self.field_dropout {
            match model.fields.iter_mut().find(|f| f.field == field) {
                Some(f) => f.keep_prob = p,
                None => bail!("--field-dropout names {field}, which the model does not use"),
            }
        }
        if self.shared_query {
            model.query_mode = QueryMode::Shared;
        }
        if !self.fields.is_empty() {
            *model = model.clone().with_fields(&self.fields);
        }
        match self.scoring {
            Some(ScoringArg::Joint) => model.scoring = Scoring::Joint,
            Some(ScoringArg::ScoreAggregation) => model.scoring = Scoring::ScoreAggregation,
            None => {}
        }
        model.validate()?;
        Ok(())
    }
}
