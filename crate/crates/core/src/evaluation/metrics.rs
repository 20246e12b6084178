use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Grade;
use crate::error::{Error, Result};

/// `2^y - 1`.
fn gain(y: Grade) -> f64 {
    f64::from((1u32 << y) - 1)
}

fn dcg(grades: &[Grade], k: usize) -> f64 {
    grades
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &y)| gain(y) / ((i + 2) as f64).log2())
        .sum()
}

/// NDCG@k of grades listed in rank order; 0 when every grade is 0.
pub fn ndcg_at_k(grades: &[Grade], k: usize) -> f64 {
    let mut ideal = grades.to_vec();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg = dcg(&ideal, k);
    if idcg == 0.0 {
        return 0.0;
    }
    dcg(grades, k) / idcg
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredDoc {
    pub doc_id: String,
    pub score: f64,
    pub grade: Grade,
}

/// The judged candidates of one query with their scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    pub docs: Vec<ScoredDoc>,
}

impl RankedList {
    /// Grades in descending score order, breaking ties by a random
    /// permutation drawn from `rng`.
    pub fn ranked_grades<R: Rng>(&self, rng: &mut R) -> Vec<Grade> {
        let mut docs: Vec<&ScoredDoc> = self.docs.iter().collect();
        docs.shuffle(rng);
        docs.sort_by(|a, b| b.score.total_cmp(&a.score));
        docs.into_iter().map(|d| d.grade).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub query_id: String,
    pub ndcg1: f64,
    pub ndcg10: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Sorted by query id.
    pub per_query: Vec<QueryMetrics>,
    pub mean_ndcg1: f64,
    pub mean_ndcg10: f64,
}

impl MetricReport {
    pub fn from_queries(mut per_query: Vec<QueryMetrics>) -> Self {
        per_query.sort_by(|a, b| a.query_id.cmp(&b.query_id));
        let n = per_query.len().max(1) as f64;
        let mean_ndcg1 = per_query.iter().map(|q| q.ndcg1).sum::<f64>() / n;
        let mean_ndcg10 = per_query.iter().map(|q| q.ndcg10).sum::<f64>() / n;
        MetricReport {
            per_query,
            mean_ndcg1,
            mean_ndcg10,
        }
    }

    /// Restricts the report to the listed queries.
    pub fn subset<S: AsRef<str>>(&self, query_ids: &[S]) -> MetricReport {
        let keep: std::collections::HashSet<&str> = query_ids.iter().map(AsRef::as_ref).collect();
        MetricReport::from_queries(
            self.per_query
                .iter()
                .filter(|q| keep.contains(q.query_id.as_str()))
                .cloned()
                .collect(),
        )
    }

    pub fn ndcg1(&self) -> Vec<f64> {
        self.per_query.iter().map(|q| q.ndcg1).collect()
    }

    pub fn ndcg10(&self) -> Vec<f64> {
        self.per_query.iter().map(|q| q.ndcg10).collect()
    }

    /// `query_id,ndcg1,ndcg10` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("query_id,ndcg1,ndcg10\n");
        for q in &self.per_query {
            out.push_str(&format!("{},{},{}\n", q.query_id, q.ndcg1, q.ndcg10));
        }
        out
    }
}

/// Writes the report as pretty-printed JSON.
pub fn save_report(report: &MetricReport, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(report)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_report(path: &Path) -> Result<MetricReport> {
    let text = crate::corpus::io::read(path)?;
    serde_json::from_str(&text).map_err(|e| Error::data(format!("{}: {e}", path.display())))
}

/// NDCG@1 and NDCG@10 per query, averaged over `shuffles` random tie-breaks.
pub fn evaluate_run<R: Rng>(lists: &[RankedList], shuffles: usize, rng: &mut R) -> MetricReport {
    let shuffles = shuffles.max(1);
    let per_query = lists
        .iter()
        .map(|list| {
            let (mut n1, mut n10) = (0.0, 0.0);
            for _ in 0..shuffles {
                let grades = list.ranked_grades(rng);
                n1 += ndcg_at_k(&grades, 1);
                n10 += ndcg_at_k(&grades, 10);
            }
            QueryMetrics {
                query_id: list.query_id.clone(),
                ndcg1: n1 / shuffles as f64,
                ndcg10: n10 / shuffles as f64,
            }
        })
        .collect();
    MetricReport::from_queries(per_query)
}
