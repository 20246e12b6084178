//! Documents, judged queries, splits and corpus files.

pub(crate) mod io;
mod synthetic;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{
    load_corpus, load_splits, save_corpus, save_splits, DOCUMENTS_FILE, JUDGMENTS_FILE,
    QUERIES_FILE, SPLITS_FILE,
};
pub use synthetic::{
    generate_synthetic, DocLatent, FieldLatent, FieldNoise, SyntheticConfig, SyntheticCorpus,
};

/// A named source of text describing a document.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    Title,
    Url,
    Body,
    Anchors,
    ClickedQueries,
}

impl Field {
    /// All fields in canonical concatenation order.
    pub const ALL: [Field; 5] = [
        Field::Title,
        Field::Url,
        Field::Body,
        Field::Anchors,
        Field::ClickedQueries,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Field::Title => "title",
            Field::Url => "url",
            Field::Body => "body",
            Field::Anchors => "anchors",
            Field::ClickedQueries => "clicked_queries",
        }
    }

    pub fn is_multi_instance(self) -> bool {
        matches!(self, Field::Anchors | Field::ClickedQueries)
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Field {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Field::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::data(format!("unknown field {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Document {
    pub id: String,
    pub title: String,
    pub url: String,
    pub body: String,
    #[serde(default)]
    pub anchors: Vec<String>,
    #[serde(default)]
    pub clicked_queries: Vec<String>,
}

impl Document {
    /// Raw instances of a field. Single-instance fields yield their text when
    /// it is not blank; multi-instance fields yield every stored instance.
    pub fn instances(&self, field: Field) -> Vec<&str> {
        fn single(s: &str) -> Vec<&str> {
            if s.trim().is_empty() {
                Vec::new()
            } else {
                vec![s]
            }
        }
        match field {
            Field::Title => single(&self.title),
            Field::Url => single(&self.url),
            Field::Body => single(&self.body),
            Field::Anchors => self.anchors.iter().map(String::as_str).collect(),
            Field::ClickedQueries => self.clicked_queries.iter().map(String::as_str).collect(),
        }
    }

    /// Removes every instance of a multi-instance field (or blanks a single one).
    pub fn clear_field(&mut self, field: Field) {
        match field {
            Field::Title => self.title.clear(),
            Field::Url => self.url.clear(),
            Field::Body => self.body.clear(),
            Field::Anchors => self.anchors.clear(),
            Field::ClickedQueries => self.clicked_queries.clear(),
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::data("document without id"));
        }
        if self.title.trim().is_empty() || self.body.trim().is_empty() {
            return Err(Error::data(format!(
                "document {} must have a nonempty title and body",
                self.id
            )));
        }
        Ok(())
    }
}

/// Relevance grade on the five-point scale, bad = 0 ... perfect = 4.
pub type Grade = u8;
pub const MAX_GRADE: Grade = 4;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgedQuery {
    pub id: String,
    pub text: String,
    pub judgments: BTreeMap<String, Grade>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Corpus {
    pub documents: Vec<Document>,
    pub queries: Vec<JudgedQuery>,
}

impl Corpus {
    pub fn document_index(&self) -> HashMap<&str, &Document> {
        self.documents.iter().map(|d| (d.id.as_str(), d)).collect()
    }

    pub fn query(&self, id: &str) -> Option<&JudgedQuery> {
        self.queries.iter().find(|q| q.id == id)
    }

    /// Checks document invariants and that every judgment refers to a known document.
    pub fn validate(&self) -> Result<()> {
        let mut ids = std::collections::HashSet::new();
        for d in &self.documents {
            d.validate()?;
            if !ids.insert(d.id.as_str()) {
                return Err(Error::data(format!("duplicate document id {}", d.id)));
            }
        }
        for q in &self.queries {
            if q.judgments.is_empty() {
                return Err(Error::data(format!("query {} has no judgments", q.id)));
            }
            for (doc, &g) in &q.judgments {
                if g > MAX_GRADE {
                    return Err(Error::data(format!("grade {g} out of range for {}", q.id)));
                }
                if !ids.contains(doc.as_str()) {
                    return Err(Error::data(format!(
                        "query {} judges unknown document {doc}",
                        q.id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Keeps at most `max` instances: duplicates merged with their counts, most
/// frequent first, ties broken by first occurrence.
pub fn select_instances<S: AsRef<str>>(instances: &[S], max: usize) -> Vec<String> {
    let mut counted: Vec<(String, usize, usize)> = Vec::new();
    let mut position: HashMap<&str, usize> = HashMap::new();
    for (i, s) in instances.iter().enumerate() {
        let s = s.as_ref();
        match position.get(s) {
            Some(&k) => counted[k].1 += 1,
            None => {
                position.insert(s, counted.len());
                counted.push((s.to_string(), 1, i));
            }
        }
    }
    counted.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    counted.into_iter().take(max).map(|c| c.0).collect()
}

/// Query-disjoint partition of query ids.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<String>,
    pub valid: Vec<String>,
    pub test: Vec<String>,
}

impl Splits {
    pub fn split_of(&self, id: &str) -> Option<&'static str> {
        if self.train.iter().any(|q| q == id) {
            Some("train")
        } else if self.valid.iter().any(|q| q == id) {
            Some("valid")
        } else if self.test.iter().any(|q| q == id) {
            Some("test")
        } else {
            None
        }
    }
}

fn seeded_hash(seed: u64, id: &str) -> u64 {
    // FNV-1a over the seed and id bytes, then a splitmix64 finalizer.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in seed.to_le_bytes().iter().chain(id.as_bytes()) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// Partitions query ids by their seeded hash into train/valid/test with the
/// given ratios (rounded to whole queries).
pub fn split<S: AsRef<str>>(query_ids: &[S], ratios: [f64; 3], seed: u64) -> Result<Splits> {
    let total: f64 = ratios.iter().sum();
    if ratios.iter().any(|&r| r < 0.0) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!(
            "split ratios {ratios:?} must sum to 1"
        )));
    }
    let mut keyed: Vec<(u64, &str)> = query_ids
        .iter()
        .map(|q| (seeded_hash(seed, q.as_ref()), q.as_ref()))
        .collect();
    keyed.sort();
    keyed.dedup_by(|a, b| a.1 == b.1);
    let n = keyed.len();
    let n_train = (ratios[0] * n as f64).round() as usize;
    let n_valid = ((ratios[1] * n as f64).round() as usize).min(n - n_train);
    let ids: Vec<String> = keyed.into_iter().map(|(_, q)| q.to_string()).collect();
    Ok(Splits {
        train: ids[..n_train].to_vec(),
        valid: ids[n_train..n_train + n_valid].to_vec(),
        test: ids[n_train + n_valid..].to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn select_instances_by_count_then_first_occurrence() {
        // counts: a5 b3 c3 d1 e1 f1 g1, interleaved
        let raw = [
            "d", "b", "a", "c", "a", "e", "b", "a", "c", "f", "a", "g", "b", "c", "a",
        ];
        assert_eq!(select_instances(&raw, 5), ["a", "b", "c", "d", "e"]);
        assert_eq!(select_instances(&["x", "y"], 5), ["x", "y"]);
        assert!(select_instances::<&str>(&[], 5).is_empty());
    }

    #[test]
    fn split_hundred_queries() {
        let ids: Vec<String> = (0..100).map(|i| format!("q{i}")).collect();
        let s = split(&ids, [0.8, 0.1, 0.1], 11).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (80, 10, 10));
        let mut all: Vec<&String> = s.train.iter().chain(&s.valid).chain(&s.test).collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 100);
        assert_eq!(s, split(&ids, [0.8, 0.1, 0.1], 11).unwrap());
        assert_ne!(s, split(&ids, [0.8, 0.1, 0.1], 12).unwrap());
    }

    #[test]
    fn split_ratios_within_one_query() {
        for n in [10usize, 13, 57, 999] {
            let ids: Vec<String> = (0..n).map(|i| format!("id-{i}")).collect();
            let s = split(&ids, [0.8, 0.1, 0.1], 3).unwrap();
            for (got, r) in [
                (s.train.len(), 0.8),
                (s.valid.len(), 0.1),
                (s.test.len(), 0.1),
            ] {
                assert!((got as f64 - r * n as f64).abs() <= 1.0, "n={n} got={got}");
            }
        }
    }

    #[test]
    fn field_names_round_trip() {
        for f in Field::ALL {
            assert_eq!(f.name().parse::<Field>().unwrap(), f);
        }
        assert!("header".parse::<Field>().is_err());
    }
}
