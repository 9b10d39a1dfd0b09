//! Exact similarity search with optional dimension masking.
//!
//! A [`DimensionMask`] restricts the coordinates seen by the similarity for both
//! vectors. For inner product that is the same as zeroing the masked-out query
//! coordinates; for cosine the norms are also taken over the active coordinates
//! only. Sums accumulate in `f64` in ascending coordinate order, so a mask that
//! covers every dimension scores bit-identically to no mask at all.
//!
//! Rankings are ordered by descending score, ties broken by ascending doc id.

use std::cmp::Ordering;
use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::store::EmbeddingMatrix;

#[derive(Debug, Error, PartialEq)]
pub enum RetrievalError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("cosine similarity undefined: zero norm over active dimensions ({0})")]
    ZeroNorm(String),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("dimension mask must select at least one dimension")]
    EmptyMask,
    #[error("mask index {index} out of range for dimension {dim}")]
    MaskOutOfRange { index: usize, dim: usize },
    #[error("pool document {0:?} not found in corpus")]
    UnknownDoc(String),
}

pub type Result<T> = std::result::Result<T, RetrievalError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Similarity {
    #[default]
    InnerProduct,
    Cosine,
}

impl std::str::FromStr for Similarity {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "inner_product" | "ip" | "dot" => Ok(Similarity::InnerProduct),
            "cosine" | "cos" => Ok(Similarity::Cosine),
            other => Err(format!("unknown similarity {other:?}")),
        }
    }
}

/// Sorted, non-empty set of active dimension indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DimensionMask {
    selected: Vec<usize>,
    dim: usize,
}

impl DimensionMask {
    pub fn new(mut selected: Vec<usize>, dim: usize) -> Result<Self> {
        selected.sort_unstable();
        selected.dedup();
        if selected.is_empty() {
            return Err(RetrievalError::EmptyMask);
        }
        if let Some(&index) = selected.last().filter(|&&i| i >= dim) {
            return Err(RetrievalError::MaskOutOfRange { index, dim });
        }
        Ok(DimensionMask { selected, dim })
    }

    pub fn full(dim: usize) -> Self {
        DimensionMask {
            selected: (0..dim).collect(),
            dim,
        }
    }

    pub fn selected(&self) -> &[usize] {
        &self.selected
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.selected.binary_search(&index).is_ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDoc {
    pub doc_id: String,
    pub score: f64,
}

/// Ranked candidates for one query, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePool {
    pub query_id: String,
    pub entries: Vec<ScoredDoc>,
}

impl CandidatePool {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.doc_id.as_str())
    }

    /// The first `k` entries as a new pool.
    pub fn truncated(&self, k: usize) -> CandidatePool {
        CandidatePool {
            query_id: self.query_id.clone(),
            entries: self.entries.iter().take(k).cloned().collect(),
        }
    }
}

/// Descending score, then ascending doc id.
pub fn rank_order(a: &ScoredDoc, b: &ScoredDoc) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.doc_id.cmp(&b.doc_id))
}

fn check_dims(left: usize, right: usize) -> Result<()> {
    if left != right {
        return Err(RetrievalError::DimensionMismatch { left, right });
    }
    Ok(())
}

fn check_mask(mask: Option<&DimensionMask>, dim: usize) -> Result<()> {
    match mask {
        Some(m) => check_dims(m.dim(), dim),
        None => Ok(()),
    }
}

// Caller guarantees matching lengths.
fn raw_score(q: &[f32], doc: &[f32], sim: Similarity, mask: Option<&DimensionMask>) -> Option<f64> {
    let (mut dot, mut qq, mut dd) = (0.0f64, 0.0f64, 0.0f64);
    let mut accumulate = |i: usize| {
        let (a, b) = (f64::from(q[i]), f64::from(doc[i]));
        dot += a * b;
        if sim == Similarity::Cosine {
            qq += a * a;
            dd += b * b;
        }
    };
    match mask {
        Some(m) => m.selected().iter().for_each(|&i| accumulate(i)),
        None => (0..q.len()).for_each(accumulate),
    }
    match sim {
        Similarity::InnerProduct => Some(dot),
        Similarity::Cosine if qq == 0.0 || dd == 0.0 => None,
        Similarity::Cosine => Some(dot / (qq.sqrt() * dd.sqrt())),
    }
}

pub fn score(q: &[f32], doc: &[f32], sim: Similarity, mask: Option<&DimensionMask>) -> Result<f64> {
    check_dims(q.len(), doc.len())?;
    check_mask(mask, q.len())?;
    raw_score(q, doc, sim, mask).ok_or_else(|| RetrievalError::ZeroNorm("document".into()))
}

fn score_row(
    q: &[f32],
    corpus: &EmbeddingMatrix,
    row: usize,
    sim: Similarity,
    mask: Option<&DimensionMask>,
) -> Result<(f64, usize)> {
    raw_score(q, corpus.row(row), sim, mask)
        .map(|score| (score, row))
        .ok_or_else(|| RetrievalError::ZeroNorm(corpus.ids()[row].clone()))
}

// Ids are only materialized for the documents that are kept.
fn keep_best(mut scored: Vec<(f64, usize)>, k: usize, corpus: &EmbeddingMatrix) -> Vec<ScoredDoc> {
    let ids = corpus.ids();
    let order = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then_with(|| ids[a.1].cmp(&ids[b.1]));
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, order);
        scored.truncate(k);
    }
    scored.sort_unstable_by(order);
    scored
        .into_iter()
        .map(|(score, row)| ScoredDoc {
            doc_id: ids[row].clone(),
            score,
        })
        .collect()
}

/// Exact top-`k` over the whole corpus.
pub fn top_k(
    query_id: &str,
    q: &[f32],
    corpus: &EmbeddingMatrix,
    k: usize,
    sim: Similarity,
    mask: Option<&DimensionMask>,
) -> Result<CandidatePool> {
    if corpus.is_empty() {
        return Err(RetrievalError::EmptyCorpus);
    }
    if k == 0 {
        return Err(RetrievalError::ZeroK);
    }
    check_dims(q.len(), corpus.dim())?;
    check_mask(mask, q.len())?;
    let scored = (0..corpus.len())
        .map(|row| score_row(q, corpus, row, sim, mask))
        .collect::<Result<Vec<_>>>()?;
    Ok(CandidatePool {
        query_id: query_id.to_owned(),
        entries: keep_best(scored, k, corpus),
    })
}

#[derive(Debug, Clone, Copy)]
pub enum RerankScope<'a> {
    FullCorpus,
    Pool(&'a CandidatePool),
}

/// Re-scores documents under `mask` and returns the best `depth` of them.
///
/// `FullCorpus` is a fresh masked search; `Pool` only re-orders the pool's members.
pub fn rerank(
    query_id: &str,
    q: &[f32],
    corpus: &EmbeddingMatrix,
    mask: &DimensionMask,
    sim: Similarity,
    depth: usize,
    scope: RerankScope<'_>,
) -> Result<CandidatePool> {
    match scope {
        RerankScope::FullCorpus => top_k(query_id, q, corpus, depth, sim, Some(mask)),
        RerankScope::Pool(pool) => {
            if depth == 0 {
                return Err(RetrievalError::ZeroK);
            }
            check_dims(q.len(), corpus.dim())?;
            check_mask(Some(mask), q.len())?;
            let mut seen = HashSet::with_capacity(pool.len());
            let scored = pool
                .doc_ids()
                .filter(|id| seen.insert(*id))
                .map(|id| {
                    let row = corpus
                        .position(id)
                        .ok_or_else(|| RetrievalError::UnknownDoc(id.to_owned()))?;
                    score_row(q, corpus, row, sim, Some(mask))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(CandidatePool {
                query_id: query_id.to_owned(),
                entries: keep_best(scored, depth, corpus),
            })
        }
    }
}
