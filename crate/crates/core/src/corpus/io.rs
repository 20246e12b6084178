use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{Corpus, Document, JudgedQuery, Splits, MAX_GRADE};
use crate::error::{Error, Result};

pub const DOCUMENTS_FILE: &str = "documents.jsonl";
pub const QUERIES_FILE: &str = "queries.jsonl";
pub const JUDGMENTS_FILE: &str = "judgments.tsv";
pub const SPLITS_FILE: &str = "splits.tsv";

#[derive(serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryRecord {
    id: String,
    text: String,
}

pub(crate) fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Non-blank lines with their 1-based line numbers.
pub(crate) fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty())
}

/// Reads `documents.jsonl`, `queries.jsonl` and `judgments.tsv` from `dir`.
pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let doc_path = dir.join(DOCUMENTS_FILE);
    let mut documents = Vec::new();
    for (n, line) in lines(&read(&doc_path)?) {
        let doc: Document =
            serde_json::from_str(line).map_err(|e| parse_error(&doc_path, n, e.to_string()))?;
        doc.validate()
            .map_err(|e| parse_error(&doc_path, n, e.to_string()))?;
        documents.push(doc);
    }

    let query_path = dir.join(QUERIES_FILE);
    let mut queries: Vec<JudgedQuery> = Vec::new();
    let mut query_pos: HashMap<String, usize> = HashMap::new();
    for (n, line) in lines(&read(&query_path)?) {
        let q: QueryRecord =
            serde_json::from_str(line).map_err(|e| parse_error(&query_path, n, e.to_string()))?;
        if q.text.trim().is_empty() {
            return Err(parse_error(
                &query_path,
                n,
                format!("query {} is empty", q.id),
            ));
        }
        if query_pos.insert(q.id.clone(), queries.len()).is_some() {
            return Err(parse_error(
                &query_path,
                n,
                format!("duplicate query {}", q.id),
            ));
        }
        queries.push(JudgedQuery {
            id: q.id,
            text: q.text,
            judgments: BTreeMap::new(),
        });
    }

    let judgment_path = dir.join(JUDGMENTS_FILE);
    for (n, line) in lines(&read(&judgment_path)?) {
        let cols: Vec<&str> = line.split('\t').collect();
        let [qid, did, grade] = cols[..] else {
            return Err(parse_error(
                &judgment_path,
                n,
                format!("expected 3 tab-separated columns, found {}", cols.len()),
            ));
        };
        let grade: u8 = grade
            .trim()
            .parse()
            .ok()
            .filter(|&g| g <= MAX_GRADE)
            .ok_or_else(|| parse_error(&judgment_path, n, format!("bad grade {grade:?}")))?;
        let &k = query_pos
            .get(qid)
            .ok_or_else(|| parse_error(&judgment_path, n, format!("unknown query {qid}")))?;
        queries[k].judgments.insert(did.to_string(), grade);
    }

    let corpus = Corpus { documents, queries };
    corpus.validate()?;
    Ok(corpus)
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Writes the corpus files into `dir`, creating it if needed.
pub fn save_corpus(corpus: &Corpus, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write_all = |path: PathBuf, body: String| -> Result<()> {
        let mut w = create(&path)?;
        w.write_all(body.as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(&path, e))
    };

    let mut docs = String::new();
    for d in &corpus.documents {
        docs.push_str(&serde_json::to_string(d)?);
        docs.push('\n');
    }
    write_all(dir.join(DOCUMENTS_FILE), docs)?;

    let mut queries = String::new();
    let mut judgments = String::new();
    for q in &corpus.queries {
        let record = QueryRecord {
            id: q.id.clone(),
            text: q.text.clone(),
        };
        queries.push_str(&serde_json::to_string(&record)?);
        queries.push('\n');
        for (doc, grade) in &q.judgments {
            judgments.push_str(&format!("{}\t{doc}\t{grade}\n", q.id));
        }
    }
    write_all(dir.join(QUERIES_FILE), queries)?;
    write_all(dir.join(JUDGMENTS_FILE), judgments)
}

/// Writes `query_id\tsplit` lines.
pub fn save_splits(splits: &Splits, path: &Path) -> Result<()> {
    let mut out = String::new();
    for (name, ids) in [
        ("train", &splits.train),
        ("valid", &splits.valid),
        ("test", &splits.test),
    ] {
        for id in ids {
            out.push_str(&format!("{id}\t{name}\n"));
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_splits(path: &Path) -> Result<Splits> {
    let mut splits = Splits::default();
    for (n, line) in lines(&read(path)?) {
        let Some((id, name)) = line.split_once('\t') else {
            return Err(parse_error(path, n, "expected query_id<TAB>split"));
        };
        match name.trim() {
            "train" => splits.train.push(id.to_string()),
            "valid" => splits.valid.push(id.to_string()),
            "test" => splits.test.push(id.to_string()),
            other => return Err(parse_error(path, n, format!("unknown split {other:?}"))),
        }
    }
    Ok(splits)
}
