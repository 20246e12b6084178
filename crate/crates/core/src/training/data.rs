use std::collections::HashMap;

use rand::Rng;

use super::triples::sample_triples;
use crate::corpus::{Corpus, Grade};
use crate::error::{Error, Result};
use crate::model::{Model, PreparedDocument, PreparedQuery};

/// Queries of one split with their judged documents, encoded for a model.
#[derive(Clone, Debug)]
pub struct PreparedSplit {
    pub queries: Vec<PreparedQuery>,
    /// Judged documents of each query as `(index into docs, grade)`.
    pub judged: Vec<Vec<(usize, Grade)>>,
    pub docs: Vec<PreparedDocument>,
    /// Queries dropped because they normalize to nothing.
    pub skipped: Vec<String>,
}

impl PreparedSplit {
    /// Encodes the listed queries (in the given order) and every document
    /// they judge. Judgments of unknown documents are an error.
    pub fn new<S: AsRef<str>>(model: &Model, corpus: &Corpus, query_ids: &[S]) -> Result<Self> {
        let doc_index = corpus.document_index();
        let mut split = PreparedSplit {
            queries: Vec::new(),
            judged: Vec::new(),
            docs: Vec::new(),
            skipped: Vec::new(),
        };
        let mut positions: HashMap<&str, usize> = HashMap::new();
        let by_id: HashMap<&str, _> = corpus.queries.iter().map(|q| (q.id.as_str(), q)).collect();
        for qid in query_ids {
            let qid = qid.as_ref();
            let q = by_id
                .get(qid)
                .ok_or_else(|| Error::data(format!("unknown query {qid}")))?;
            let prepared = match model.prepare_query(&q.id, &q.text) {
                Ok(p) => p,
                Err(Error::Data(_)) => {
                    split.skipped.push(q.id.clone());
                    continue;
                }
                Err(e) => return Err(e),
            };
            let mut judged = Vec::with_capacity(q.judgments.len());
            for (doc_id, &grade) in &q.judgments {
                let doc = doc_index.get(doc_id.as_str()).ok_or_else(|| {
                    Error::data(format!("query {qid} judges unknown document {doc_id}"))
                })?;
                let next = split.docs.len();
                let pos = *positions.entry(doc.id.as_str()).or_insert(next);
                if pos == next {
                    split.docs.push(model.prepare_document(doc));
                }
                judged.push((pos, grade));
            }
            split.queries.push(prepared);
            split.judged.push(judged);
        }
        Ok(split)
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    /// Samples up to `cap` triples per query, grouped by query.
    pub fn sample_triples<R: Rng>(&self, cap: usize, rng: &mut R) -> Vec<QueryTriples> {
        let mut out = Vec::new();
        for (qi, judged) in self.judged.iter().enumerate() {
            let judgments = judged
                .iter()
                .map(|&(d, g)| (self.docs[d].id.clone(), g))
                .collect();
            let local: HashMap<&str, usize> = judged
                .iter()
                .map(|&(d, _)| (self.docs[d].id.as_str(), d))
                .collect();
            let triples: Vec<IndexedTriple> =
                sample_triples(&self.queries[qi].id, &judgments, cap, rng)
                    .into_iter()
                    .map(|t| IndexedTriple {
                        query: qi,
                        doc1: local[t.doc1.as_str()],
                        doc2: local[t.doc2.as_str()],
                        y1: t.y1,
                        y2: t.y2,
                    })
                    .collect();
            if !triples.is_empty() {
                out.push(QueryTriples { query: qi, triples });
            }
        }
        out
    }
}

/// A training triple addressed by positions in a [`PreparedSplit`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IndexedTriple {
    pub query: usize,
    pub doc1: usize,
    pub doc2: usize,
    pub y1: Grade,
    pub y2: Grade,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QueryTriples {
    pub query: usize,
    pub triples: Vec<IndexedTriple>,
}
