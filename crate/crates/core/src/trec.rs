//! TREC qrels (`qid iter docid rel`) and run files (`qid Q0 docid rank score tag`).

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrecError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected {expected} fields, found {found}")]
    FieldCount {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: relevance grade {value:?} is not a non-negative integer")]
    InvalidGrade { line: usize, value: String },
    #[error("line {line}: duplicate judgment for ({query_id}, {doc_id})")]
    DuplicateJudgment {
        line: usize,
        query_id: String,
        doc_id: String,
    },
    #[error("line {line}: invalid {field} {value:?}")]
    InvalidField {
        line: usize,
        field: &'static str,
        value: String,
    },
    #[error("line {line}: {source}")]
    InvalidRun {
        line: usize,
        #[source]
        source: RunInvariantError,
    },
    #[error(transparent)]
    Invariant(#[from] RunInvariantError),
}

#[derive(Debug, Error, PartialEq)]
pub enum RunInvariantError {
    #[error("query {query_id}: expected rank {expected}, found {found}")]
    RankGap {
        query_id: String,
        expected: u32,
        found: u32,
    },
    #[error("query {query_id}: score increases at rank {rank}")]
    ScoreIncrease { query_id: String, rank: u32 },
    #[error("query {query_id}: document {doc_id} listed twice")]
    DuplicateDoc { query_id: String, doc_id: String },
    #[error("non-finite score for ({query_id}, {doc_id})")]
    NonFiniteScore { query_id: String, doc_id: String },
    #[error("field {0:?} must be non-empty and whitespace-free")]
    BadToken(String),
}

pub type Result<T> = std::result::Result<T, TrecError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrecError + '_ {
    move |source| TrecError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Graded relevance judgments. Unjudged pairs read as grade 0.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    judgments: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns false if the pair was already judged (the existing grade is kept).
    pub fn insert(&mut self, query_id: &str, doc_id: &str, grade: u32) -> bool {
        let docs = self.judgments.entry(query_id.to_owned()).or_default();
        if docs.contains_key(doc_id) {
            return false;
        }
        docs.insert(doc_id.to_owned(), grade);
        true
    }

    pub fn grade(&self, query_id: &str, doc_id: &str) -> u32 {
        self.judgments
            .get(query_id)
            .and_then(|docs| docs.get(doc_id))
            .copied()
            .unwrap_or(0)
    }

    pub fn query(&self, query_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.judgments.get(query_id)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    pub fn contains_query(&self, query_id: &str) -> bool {
        self.judgments.contains_key(query_id)
    }

    pub fn len(&self) -> usize {
        self.judgments.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_trec_string(&self) -> String {
        let mut out = String::new();
        for (q, docs) in &self.judgments {
            for (d, g) in docs {
                writeln!(out, "{q} 0 {d} {g}").unwrap();
            }
        }
        out
    }
}

pub fn parse_qrels_str(text: &str) -> Result<Qrels> {
    let mut qrels = Qrels::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 4 {
            return Err(TrecError::FieldCount {
                line,
                expected: 4,
                found: fields.len(),
            });
        }
        let grade: u32 = fields[3].parse().map_err(|_| TrecError::InvalidGrade {
            line,
            value: fields[3].to_owned(),
        })?;
        if !qrels.insert(fields[0], fields[2], grade) {
            return Err(TrecError::DuplicateJudgment {
                line,
                query_id: fields[0].to_owned(),
                doc_id: fields[2].to_owned(),
            });
        }
    }
    Ok(qrels)
}

pub fn parse_qrels(path: &Path) -> Result<Qrels> {
    parse_qrels_str(&fs::read_to_string(path).map_err(io_err(path))?)
}

pub fn write_qrels(qrels: &Qrels, path: &Path) -> Result<()> {
    fs::write(path, qrels.to_trec_string()).map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunEntry {
    pub query_id: String,
    pub doc_id: String,
    pub rank: u32,
    pub score: f64,
    pub tag: String,
}

fn token_ok(s: &str) -> bool {
    !s.is_empty() && !s.chars().any(char::is_whitespace)
}

struct QueryState<'a> {
    last_rank: u32,
    last_score: f64,
    docs: HashSet<&'a str>,
}

/// Per query, in order of appearance: ranks run 1, 2, .., scores never increase,
/// and no document repeats.
pub fn validate_run(entries: &[RunEntry]) -> std::result::Result<(), (usize, RunInvariantError)> {
    let mut state: HashMap<&str, QueryState<'_>> = HashMap::new();
    for (i, e) in entries.iter().enumerate() {
        for token in [&e.query_id, &e.doc_id, &e.tag] {
            if !token_ok(token) {
                return Err((i, RunInvariantError::BadToken(token.clone())));
            }
        }
        if !e.score.is_finite() {
            return Err((
                i,
                RunInvariantError::NonFiniteScore {
                    query_id: e.query_id.clone(),
                    doc_id: e.doc_id.clone(),
                },
            ));
        }
        let s = state.entry(&e.query_id).or_insert_with(|| QueryState {
            last_rank: 0,
            last_score: f64::INFINITY,
            docs: HashSet::new(),
        });
        if e.rank != s.last_rank + 1 {
            return Err((
                i,
                RunInvariantError::RankGap {
                    query_id: e.query_id.clone(),
                    expected: s.last_rank + 1,
                    found: e.rank,
                },
            ));
        }
        if e.score > s.last_score {
            return Err((
                i,
                RunInvariantError::ScoreIncrease {
                    query_id: e.query_id.clone(),
                    rank: e.rank,
                },
            ));
        }
        if !s.docs.insert(&e.doc_id) {
            return Err((
                i,
                RunInvariantError::DuplicateDoc {
                    query_id: e.query_id.clone(),
                    doc_id: e.doc_id.clone(),
                },
            ));
        }
        s.last_rank = e.rank;
        s.last_score = e.score;
    }
    Ok(())
}

pub fn format_run(entries: &[RunEntry]) -> Result<String> {
    validate_run(entries).map_err(|(_, e)| TrecError::Invariant(e))?;
    let mut out = String::with_capacity(entries.len() * 48);
    for e in entries {
        writeln!(
            out,
            "{} Q0 {} {} {:.6} {}",
            e.query_id, e.doc_id, e.rank, e.score, e.tag
        )
        .unwrap();
    }
    Ok(out)
}

/// Validates everything before touching the file.
pub fn write_run(entries: &[RunEntry], path: &Path) -> Result<()> {
    let text = format_run(entries)?;
    fs::write(path, text).map_err(io_err(path))
}

pub fn parse_run_str(text: &str) -> Result<Vec<RunEntry>> {
    let mut entries = Vec::new();
    let mut lines = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 6 {
            return Err(TrecError::FieldCount {
                line,
                expected: 6,
                found: fields.len(),
            });
        }
        let rank: u32 = fields[3].parse().map_err(|_| TrecError::InvalidField {
            line,
            field: "rank",
            value: fields[3].to_owned(),
        })?;
        let score: f64 = fields[4]
            .parse()
            .ok()
            .filter(|s: &f64| s.is_finite())
            .ok_or_else(|| TrecError::InvalidField {
                line,
                field: "score",
                value: fields[4].to_owned(),
            })?;
        entries.push(RunEntry {
            query_id: fields[0].to_owned(),
            doc_id: fields[2].to_owned(),
            rank,
            score,
            tag: fields[5].to_owned(),
        });
        lines.push(line);
    }
    validate_run(&entries).map_err(|(i, source)| TrecError::InvalidRun {
        line: lines[i],
        source,
    })?;
    Ok(entries)
}

pub fn parse_run(path: &Path) -> Result<Vec<RunEntry>> {
    parse_run_str(&fs::read_to_string(path).map_err(io_err(path))?)
}
