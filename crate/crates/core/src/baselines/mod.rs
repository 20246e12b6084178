//! Classical term-matching rankers: BM25 over concatenated fields, BM25F and
//! per-field BM25 score interpolation.

mod scoring;

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use scoring::{
    bm25, bm25f, interpolate_scores, Bm25Params, Bm25fWeights, CollectionStats, FieldWeight,
    FieldedDoc, TermStats,
};

use crate::corpus::{Corpus, Field};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_run, ranked_lists, RunEntry, DEFAULT_SHUFFLES};
use crate::text::normalize;

/// Tokenized documents with collection statistics over the whole corpus.
#[derive(Clone, Debug)]
pub struct BaselineIndex {
    docs: HashMap<String, FieldedDoc>,
    pub stats: CollectionStats,
}

impl BaselineIndex {
    pub fn new(corpus: &Corpus) -> Result<Self> {
        let docs: Vec<FieldedDoc> = corpus.documents.iter().map(FieldedDoc::new).collect();
        let stats = CollectionStats::build(&docs)?;
        Ok(BaselineIndex {
            docs: docs.into_iter().map(|d| (d.id.clone(), d)).collect(),
            stats,
        })
    }

    /// Scores every judged document of the listed queries.
    pub fn run_with<S, F>(
        &self,
        corpus: &Corpus,
        query_ids: &[S],
        mut score: F,
    ) -> Result<Vec<RunEntry>>
    where
        S: AsRef<str>,
        F: FnMut(&[String], &FieldedDoc) -> Result<f64>,
    {
        let mut out = Vec::new();
        for qid in query_ids {
            let q = corpus
                .query(qid.as_ref())
                .ok_or_else(|| Error::data(format!("unknown query {}", qid.as_ref())))?;
            let tokens = normalize(&q.text).tokens;
            for doc_id in q.judgments.keys() {
                let doc = self
                    .docs
                    .get(doc_id)
                    .ok_or_else(|| Error::data(format!("unknown document {doc_id}")))?;
                out.push(RunEntry {
                    query_id: q.id.clone(),
                    doc_id: doc_id.clone(),
                    score: score(&tokens, doc)?,
                });
            }
        }
        Ok(out)
    }

    pub fn bm25_run<S: AsRef<str>>(
        &self,
        corpus: &Corpus,
        query_ids: &[S],
        params: Bm25Params,
    ) -> Result<Vec<RunEntry>> {
        self.run_with(corpus, query_ids, |q, d| {
            Ok(bm25(q, &d.concatenated(), &self.stats.concatenated, params))
        })
    }

    /// BM25 on one field with that field's statistics.
    pub fn field_bm25_run<S: AsRef<str>>(
        &self,
        corpus: &Corpus,
        query_ids: &[S],
        field: Field,
        params: Bm25Params,
    ) -> Result<Vec<RunEntry>> {
        let stats = self.stats.field(field);
        self.run_with(corpus, query_ids, |q, d| {
            Ok(bm25(q, d.field(field), stats, params))
        })
    }

    pub fn bm25f_run<S: AsRef<str>>(
        &self,
        corpus: &Corpus,
        query_ids: &[S],
        weights: &Bm25fWeights,
    ) -> Result<Vec<RunEntry>> {
        weights.validate()?;
        self.run_with(corpus, query_ids, |q, d| bm25f(q, d, &self.stats, weights))
    }

    /// Convex combination of per-field BM25 runs (fields in canonical order).
    pub fn interpolated_run<S: AsRef<str>>(
        &self,
        corpus: &Corpus,
        query_ids: &[S],
        mixing: &[f64],
        params: Bm25Params,
    ) -> Result<Vec<RunEntry>> {
        let per_field = self.per_field_runs(corpus, query_ids, params)?;
        interpolate_runs(&per_field, mixing)
    }

    fn per_field_runs<S: AsRef<str>>(
        &self,
        corpus: &Corpus,
        query_ids: &[S],
        params: Bm25Params,
    ) -> Result<Vec<Vec<RunEntry>>> {
        Field::ALL
            .iter()
            .map(|&f| self.field_bm25_run(corpus, query_ids, f, params))
            .collect()
    }
}

/// Mixes aligned runs (same entries in the same order) with convex weights.
pub fn interpolate_runs(runs: &[Vec<RunEntry>], mixing: &[f64]) -> Result<Vec<RunEntry>> {
    let first = runs
        .first()
        .ok_or_else(|| Error::config("no runs to interpolate"))?;
    let mut out = first.clone();
    for (i, entry) in out.iter_mut().enumerate() {
        let scores: Vec<f64> = runs.iter().map(|r| r[i].score).collect();
        entry.score = interpolate_scores(&scores, mixing)?;
    }
    Ok(out)
}

/// Every weight vector of length `n` with entries in multiples of `1/steps`
/// summing to 1.
pub fn simplex_grid(n: usize, steps: usize) -> Vec<Vec<f64>> {
    fn rec(n: usize, left: usize, steps: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        if cur.len() + 1 == n {
            cur.push(left);
            out.push(cur.iter().map(|&k| k as f64 / steps as f64).collect());
            cur.pop();
            return;
        }
        for k in 0..=left {
            cur.push(k);
            rec(n, left - k, steps, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if n > 0 && steps > 0 {
        rec(n, steps, steps, &mut Vec::new(), &mut out);
    }
    out
}

fn validation_ndcg10<S: AsRef<str>>(
    run: &[RunEntry],
    corpus: &Corpus,
    ids: &[S],
    seed: u64,
) -> Result<f64> {
    let lists = ranked_lists(run, corpus, ids)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(evaluate_run(&lists, DEFAULT_SHUFFLES, &mut rng).mean_ndcg10)
}

/// Picks the BM25F field weights (each from `values`, not all zero) with the
/// best validation NDCG@10. Ties keep the earliest candidate.
pub fn tune_bm25f<S: AsRef<str>>(
    index: &BaselineIndex,
    corpus: &Corpus,
    valid_ids: &[S],
    values: &[f64],
    seed: u64,
) -> Result<(Bm25fWeights, f64)> {
    let n = Field::ALL.len();
    let mut best: Option<(Bm25fWeights, f64)> = None;
    let total = values.len().pow(n as u32);
    for code in 0..total {
        let mut weights = Bm25fWeights::uniform();
        let mut c = code;
        for fw in &mut weights.fields {
            fw.weight = values[c % values.len()];
            c /= values.len();
        }
        if weights.validate().is_err() {
            continue;
        }
        let run = index.bm25f_run(corpus, valid_ids, &weights)?;
        let ndcg = validation_ndcg10(&run, corpus, valid_ids, seed)?;
        if best.as_ref().is_none_or(|(_, b)| ndcg > *b) {
            best = Some((weights, ndcg));
        }
    }
    best.ok_or_else(|| Error::config("bm25f grid has no valid weight setting"))
}

/// Picks per-field mixing weights from a simplex grid by validation NDCG@10.
pub fn tune_interpolation<S: AsRef<str>>(
    index: &BaselineIndex,
    corpus: &Corpus,
    valid_ids: &[S],
    steps: usize,
    params: Bm25Params,
    seed: u64,
) -> Result<(Vec<f64>, f64)> {
    let per_field = index.per_field_runs(corpus, valid_ids, params)?;
    let mut best: Option<(Vec<f64>, f64)> = None;
    for mixing in simplex_grid(Field::ALL.len(), steps) {
        let run = interpolate_runs(&per_field, &mixing)?;
        let ndcg = validation_ndcg10(&run, corpus, valid_ids, seed)?;
        if best.as_ref().is_none_or(|(_, b)| ndcg > *b) {
            best = Some((mixing, ndcg));
        }
    }
    best.ok_or_else(|| Error::config("empty interpolation grid"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simplex_grid_sums_to_one() {
        let g = simplex_grid(3, 4);
        // Compositions of 4 into 3 parts: C(6, 2).
        assert_eq!(g.len(), 15);
        for w in &g {
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert_eq!(simplex_grid(1, 3), vec![vec![1.0]]);
    }
}
