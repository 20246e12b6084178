use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{evaluate_run, MetricReport, RankedList, ScoredDoc};
use super::significance::{paired_t_test, TTest};
use crate::corpus::io::{lines, parse_error, read};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::training::{Checkpoint, PreparedSplit};

/// One line of a run file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub query_id: String,
    pub doc_id: String,
    pub score: f64,
}

/// Writes `query_id\tdoc_id\tscore` lines.
pub fn save_run(entries: &[RunEntry], path: &Path) -> Result<()> {
    let mut out = String::new();
    for e in entries {
        out.push_str(&format!("{}\t{}\t{}\n", e.query_id, e.doc_id, e.score));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_run(path: &Path) -> Result<Vec<RunEntry>> {
    let mut entries = Vec::new();
    for (n, line) in lines(&read(path)?) {
        let cols: Vec<&str> = line.split('\t').collect();
        let [qid, did, score] = cols[..] else {
            return Err(parse_error(
                path,
                n,
                format!("expected 3 tab-separated columns, found {}", cols.len()),
            ));
        };
        let score: f64 = score
            .trim()
            .parse()
            .map_err(|_| parse_error(path, n, format!("bad score {score:?}")))?;
        if !score.is_finite() {
            return Err(parse_error(path, n, "score must be finite"));
        }
        entries.push(RunEntry {
            query_id: qid.to_string(),
            doc_id: did.to_string(),
            score,
        });
    }
    Ok(entries)
}

/// Joins run scores with the judgments of the listed queries. Only judged
/// documents are ranked; each must have a score in the run.
pub fn ranked_lists<S: AsRef<str>>(
    run: &[RunEntry],
    corpus: &Corpus,
    query_ids: &[S],
) -> Result<Vec<RankedList>> {
    let scores: HashMap<(&str, &str), f64> = run
        .iter()
        .map(|e| ((e.query_id.as_str(), e.doc_id.as_str()), e.score))
        .collect();
    query_ids
        .iter()
        .map(|qid| {
            let qid = qid.as_ref();
            let q = corpus
                .query(qid)
                .ok_or_else(|| Error::data(format!("unknown query {qid}")))?;
            if q.judgments.is_empty() {
                return Err(Error::data(format!("query {qid} has no judged documents")));
            }
            let docs = q
                .judgments
                .iter()
                .map(|(doc_id, &grade)| {
                    let score = *scores.get(&(qid, doc_id.as_str())).ok_or_else(|| {
                        Error::data(format!("run has no score for {qid} / {doc_id}"))
                    })?;
                    Ok(ScoredDoc {
                        doc_id: doc_id.clone(),
                        score,
                        grade,
                    })
                })
                .collect::<Result<_>>()?;
            Ok(RankedList {
                query_id: qid.to_string(),
                docs,
            })
        })
        .collect()
}

/// Scores every judged document of the split. Queries that normalize to
/// nothing get score 0 for every document, leaving their order to the
/// tie shuffles.
pub fn score_split(model: &Model, data: &PreparedSplit, corpus: &Corpus) -> Result<Vec<RunEntry>> {
    let mut out = Vec::new();
    for (q, judged) in data.queries.iter().zip(&data.judged) {
        let docs: Vec<_> = judged.iter().map(|&(d, _)| data.docs[d].clone()).collect();
        let scores = model.score_all(q, &docs)?;
        for (doc, score) in docs.iter().zip(scores) {
            out.push(RunEntry {
                query_id: q.id.clone(),
                doc_id: doc.id.clone(),
                score,
            });
        }
    }
    for qid in &data.skipped {
        let q = corpus
            .query(qid)
            .ok_or_else(|| Error::data(format!("unknown query {qid}")))?;
        for doc_id in q.judgments.keys() {
            out.push(RunEntry {
                query_id: qid.clone(),
                doc_id: doc_id.clone(),
                score: 0.0,
            });
        }
    }
    Ok(out)
}

/// Splits queries into short, medium and long thirds by token count (ties
/// by id); earlier buckets take the remainder, so sizes differ by at most 1.
pub fn bucket_by_query_length(queries: &[(String, usize)]) -> Result<[Vec<String>; 3]> {
    if queries.len() < 3 {
        return Err(Error::data(format!(
            "need at least 3 queries to bucket, got {}",
            queries.len()
        )));
    }
    let mut sorted: Vec<&(String, usize)> = queries.iter().collect();
    sorted.sort_by(|a, b| a.1.cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    let n = sorted.len();
    let sizes = [
        n / 3 + usize::from(n % 3 > 0),
        n / 3 + usize::from(n % 3 > 1),
        n / 3,
    ];
    let mut it = sorted.into_iter().map(|q| q.0.clone());
    Ok(sizes.map(|s| it.by_ref().take(s).collect()))
}

/// Paired comparison of two reports over the same queries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub queries: usize,
    pub a_ndcg1: f64,
    pub b_ndcg1: f64,
    pub a_ndcg10: f64,
    pub b_ndcg10: f64,
    pub ndcg1: TTest,
    pub ndcg10: TTest,
}

impl Comparison {
    /// Fixed-width table of both means, their difference and the paired
    /// t-test, one row per metric.
    pub fn summary(&self, a: &str, b: &str) -> String {
        let row = |metric: &str, va: f64, vb: f64, t: &TTest| {
            let verdict = if t.significant {
                "significant"
            } else {
                "not significant"
            };
            format!(
                "{metric:<8} {va:>12.4} {vb:>12.4} {:>+9.4} {:>9.3} {:>8.4}  {verdict}\n",
                va - vb,
                t.t,
                t.p_value
            )
        };
        let name = |s: &str| s.chars().take(12).collect::<String>();
        format!(
            "queries: {}\n{:<8} {:>12} {:>12} {:>9} {:>9} {:>8}  verdict\n{}{}",
            self.queries,
            "metric",
            name(a),
            name(b),
            "diff",
            "t",
            "p",
            row("NDCG@1", self.a_ndcg1, self.b_ndcg1, &self.ndcg1),
            row("NDCG@10", self.a_ndcg10, self.b_ndcg10, &self.ndcg10)
        )
    }
}

pub fn compare_reports(a: &MetricReport, b: &MetricReport) -> Result<Comparison> {
    let ids = |r: &MetricReport| {
        r.per_query
            .iter()
            .map(|q| q.query_id.clone())
            .collect::<Vec<_>>()
    };
    if ids(a) != ids(b) {
        return Err(Error::data("reports cover different queries"));
    }
    Ok(Comparison {
        queries: a.per_query.len(),
        a_ndcg1: a.mean_ndcg1,
        b_ndcg1: b.mean_ndcg1,
        a_ndcg10: a.mean_ndcg10,
        b_ndcg10: b.mean_ndcg10,
        ndcg1: paired_t_test(&a.ndcg1(), &b.ndcg1())?,
        ndcg10: paired_t_test(&a.ndcg10(), &b.ndcg10())?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub instances_seen: usize,
    pub ndcg10: f64,
}

/// Test NDCG@10 of each checkpoint, in ascending order of instances seen.
pub fn learning_curve<R: Rng>(
    checkpoints: &[Checkpoint],
    data: &PreparedSplit,
    corpus: &Corpus,
    shuffles: usize,
    rng: &mut R,
) -> Result<Vec<CurvePoint>> {
    let ids: Vec<String> = data
        .queries
        .iter()
        .map(|q| q.id.clone())
        .chain(data.skipped.iter().cloned())
        .collect();
    let mut points = checkpoints
        .iter()
        .map(|c| {
            let run = score_split(&c.model, data, corpus)?;
            let lists = ranked_lists(&run, corpus, &ids)?;
            Ok(CurvePoint {
                instances_seen: c.instances_seen,
                ndcg10: evaluate_run(&lists, shuffles, rng).mean_ndcg10,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    points.sort_by_key(|p| p.instances_seen);
    Ok(points)
}

pub fn learning_curve_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from("training_instances,ndcg10\n");
    for p in points {
        out.push_str(&format!("{},{}\n", p.instances_seen, p.ndcg10));
    }
    out
}
