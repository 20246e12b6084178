use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Field};
use crate::error::{Error, Result};
use crate::text::{normalize, split_url};

/// Word tokens of every field of a document; multi-instance fields are
/// concatenated.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldedDoc {
    pub id: String,
    pub fields: Vec<(Field, Vec<String>)>,
}

impl FieldedDoc {
    pub fn new(doc: &Document) -> Self {
        let fields = Field::ALL
            .iter()
            .map(|&f| {
                let tokens = doc
                    .instances(f)
                    .into_iter()
                    .flat_map(|t| {
                        if f == Field::Url {
                            split_url(t).tokens
                        } else {
                            normalize(t).tokens
                        }
                    })
                    .collect();
                (f, tokens)
            })
            .collect();
        FieldedDoc {
            id: doc.id.clone(),
            fields,
        }
    }

    pub fn field(&self, field: Field) -> &[String] {
        self.fields
            .iter()
            .find(|(f, _)| *f == field)
            .map_or(&[], |(_, t)| t.as_slice())
    }

    /// All fields joined in canonical order.
    pub fn concatenated(&self) -> Vec<String> {
        self.fields
            .iter()
            .flat_map(|(_, t)| t.iter().cloned())
            .collect()
    }
}

/// Document frequencies and average length over one token stream per document.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TermStats {
    pub n_docs: usize,
    pub df: HashMap<String, usize>,
    pub avg_len: f64,
}

impl TermStats {
    pub fn build<'a, I: IntoIterator<Item = &'a [String]>>(docs: I) -> Result<Self> {
        let mut stats = TermStats::default();
        let mut total_len = 0usize;
        for tokens in docs {
            stats.n_docs += 1;
            total_len += tokens.len();
            let mut seen: Vec<&String> = tokens.iter().collect();
            seen.sort_unstable();
            seen.dedup();
            for t in seen {
                *stats.df.entry(t.clone()).or_default() += 1;
            }
        }
        if stats.n_docs == 0 {
            return Err(Error::data(
                "cannot build statistics over an empty collection",
            ));
        }
        stats.avg_len = total_len as f64 / stats.n_docs as f64;
        Ok(stats)
    }

    /// Robertson-Sparck-Jones idf with 0.5 smoothing, floored at 0.
    pub fn idf(&self, term: &str) -> f64 {
        let df = self.df.get(term).copied().unwrap_or(0) as f64;
        let n = self.n_docs as f64;
        ((n - df + 0.5) / (df + 0.5)).ln().max(0.0)
    }

    /// `1 - b + b * len / avg_len`, or 1 when the stream is empty everywhere.
    fn length_norm(&self, len: usize, b: f64) -> f64 {
        if self.avg_len == 0.0 {
            1.0
        } else {
            1.0 - b + b * len as f64 / self.avg_len
        }
    }
}

/// Statistics for the concatenated document and for each field.
#[derive(Clone, Debug, PartialEq)]
pub struct CollectionStats {
    pub concatenated: TermStats,
    pub fields: Vec<(Field, TermStats)>,
}

impl CollectionStats {
    pub fn build(docs: &[FieldedDoc]) -> Result<Self> {
        let concat: Vec<Vec<String>> = docs.iter().map(FieldedDoc::concatenated).collect();
        let concatenated = TermStats::build(concat.iter().map(Vec::as_slice))?;
        let fields = Field::ALL
            .iter()
            .map(|&f| Ok((f, TermStats::build(docs.iter().map(|d| d.field(f)))?)))
            .collect::<Result<_>>()?;
        Ok(CollectionStats {
            concatenated,
            fields,
        })
    }

    pub fn field(&self, field: Field) -> &TermStats {
        &self
            .fields
            .iter()
            .find(|(f, _)| *f == field)
            .expect("statistics cover every field")
            .1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

fn term_frequency(tokens: &[String], term: &str) -> usize {
    tokens.iter().filter(|t| *t == term).count()
}

/// BM25 of a token stream; repeated query terms count once per occurrence.
pub fn bm25(query: &[String], doc: &[String], stats: &TermStats, params: Bm25Params) -> f64 {
    let norm = stats.length_norm(doc.len(), params.b);
    query
        .iter()
        .map(|term| {
            let tf = term_frequency(doc, term) as f64;
            if tf == 0.0 {
                return 0.0;
            }
            stats.idf(term) * tf * (params.k1 + 1.0) / (tf + params.k1 * norm)
        })
        .sum()
}

/// Per-field weight and length normalization for BM25F.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldWeight {
    pub field: Field,
    pub weight: f64,
    pub b: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bm25fWeights {
    pub fields: Vec<FieldWeight>,
    pub k1: f64,
}

impl Bm25fWeights {
    /// Weight 1 and `b = 0.75` on every field.
    pub fn uniform() -> Self {
        Bm25fWeights {
            fields: Field::ALL
                .iter()
                .map(|&field| FieldWeight {
                    field,
                    weight: 1.0,
                    b: 0.75,
                })
                .collect(),
            k1: 1.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k1 > 0.0) {
            return Err(Error::config("bm25f k1 must be positive"));
        }
        if self
            .fields
            .iter()
            .any(|f| f.weight < 0.0 || !(0.0..=1.0).contains(&f.b))
        {
            return Err(Error::config("bm25f weights must be >= 0 and b in [0, 1]"));
        }
        if !self.fields.iter().any(|f| f.weight > 0.0) {
            return Err(Error::config(
                "bm25f needs at least one positive field weight",
            ));
        }
        Ok(())
    }
}

/// BM25F: field frequencies are length-normalized, weighted and summed per
/// term before a single saturation; idf comes from concatenated statistics.
pub fn bm25f(
    query: &[String],
    doc: &FieldedDoc,
    stats: &CollectionStats,
    weights: &Bm25fWeights,
) -> Result<f64> {
    weights.validate()?;
    let mut score = 0.0;
    for term in query {
        let pseudo: f64 = weights
            .fields
            .iter()
            .filter(|fw| fw.weight > 0.0)
            .map(|fw| {
                let tokens = doc.field(fw.field);
                let tf = term_frequency(tokens, term) as f64;
                if tf == 0.0 {
                    0.0
                } else {
                    fw.weight * tf / stats.field(fw.field).length_norm(tokens.len(), fw.b)
                }
            })
            .sum();
        if pseudo > 0.0 {
            score += stats.concatenated.idf(term) * pseudo / (weights.k1 + pseudo);
        }
    }
    Ok(score)
}

/// Convex combination of per-field scores.
pub fn interpolate_scores(scores: &[f64], weights: &[f64]) -> Result<f64> {
    if scores.len() != weights.len() {
        return Err(Error::config(format!(
            "{} scores for {} weights",
            scores.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|&w| w < 0.0) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!(
            "mixing weights {weights:?} must be nonnegative and sum to 1"
        )));
    }
    Ok(scores.iter().zip(weights).map(|(s, w)| s * w).sum())
}
