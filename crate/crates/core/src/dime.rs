//! Dimension importance estimators.
//!
//! Standard DIME scores dimension `i` as `q[i] * s[i]`, where the "sun" `s` is a
//! relevant representative: the centroid of the top pseudo-relevant pool
//! documents (PRF) or an LLM-generated answer embedding (LLM).
//!
//! ECLIPSE adds a contrastive term built from the "moon" `m`, the centroid of
//! the bottom of the candidate pool:
//!
//! ```text
//! u[i] = alpha * q[i] * s[i] - beta * q[i] * m[i]
//!      = q[i] * (alpha * s[i] - beta * m[i])
//! ```
//!
//! `alpha` and `beta` are independent weights, not a convex combination.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::retrieval::{CandidatePool, DimensionMask};
use crate::store::{Embedding, EmbeddingMatrix};

#[derive(Debug, Error, PartialEq)]
pub enum DimeError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("pool holds {available} documents, {requested} requested")]
    PoolTooShort { requested: usize, available: usize },
    #[error("centroid needs at least one document")]
    EmptyCentroid,
    #[error("pool document {0:?} not found in corpus")]
    UnknownDoc(String),
    #[error("retained fraction {0} outside (0, 1]")]
    InvalidFraction(f64),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, DimeError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SunSource {
    Prf,
    Llm,
}

/// Hyperparameters of one DIME/ECLIPSE configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimeConfig {
    pub variant: SunSource,
    pub k_plus: usize,
    pub k_minus: usize,
    pub alpha: f64,
    pub beta: f64,
    pub pool_size: usize,
    pub retained_fraction: f64,
}

impl DimeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(DimeError::InvalidConfig(msg));
        if self.pool_size == 0 {
            return bad("pool_size must be positive".into());
        }
        if self.k_minus == 0 || self.k_minus >= self.pool_size {
            return bad(format!(
                "k_minus must satisfy 0 < k_minus < pool_size (k_minus={}, pool_size={})",
                self.k_minus, self.pool_size
            ));
        }
        if self.variant == SunSource::Prf
            && (self.k_plus == 0 || self.k_plus >= self.pool_size - self.k_minus)
        {
            return bad(format!(
                "k_plus must satisfy 0 < k_plus < pool_size - k_minus (k_plus={}, k_minus={}, pool_size={})",
                self.k_plus, self.k_minus, self.pool_size
            ));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be non-negative, got {}", self.beta));
        }
        if !(self.retained_fraction > 0.0 && self.retained_fraction <= 1.0) {
            return Err(DimeError::InvalidFraction(self.retained_fraction));
        }
        Ok(())
    }
}

/// Per-dimension importance scores `u_q`.
#[derive(Debug, Clone, PartialEq)]
pub struct DimensionImportance(Vec<f64>);

impl DimensionImportance {
    pub fn new(scores: Vec<f64>) -> Self {
        debug_assert!(scores.iter().all(|s| s.is_finite()));
        DimensionImportance(scores)
    }

    pub fn scores(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Dimension indices ordered by decreasing importance, lower index first on ties.
    pub fn ranked_dimensions(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.0.len()).collect();
        order.sort_by(|&a, &b| self.0[b].total_cmp(&self.0[a]).then(a.cmp(&b)));
        order
    }
}

fn check_dims(left: usize, right: usize) -> Result<()> {
    if left != right {
        return Err(DimeError::DimensionMismatch { left, right });
    }
    Ok(())
}

/// Coordinate-wise mean of the named corpus documents.
pub fn centroid<'a, I>(doc_ids: I, corpus: &EmbeddingMatrix) -> Result<Embedding>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut sum = vec![0.0f64; corpus.dim()];
    let mut count = 0usize;
    for id in doc_ids {
        let row = corpus
            .get(id)
            .ok_or_else(|| DimeError::UnknownDoc(id.to_owned()))?;
        for (acc, &v) in sum.iter_mut().zip(row) {
            *acc += f64::from(v);
        }
        count += 1;
    }
    if count == 0 {
        return Err(DimeError::EmptyCentroid);
    }
    let values = sum.into_iter().map(|s| (s / count as f64) as f32).collect();
    Ok(Embedding::new(values).expect("mean of finite rows is finite"))
}

/// Sun for the PRF variants: mean of the top `k_plus` pool documents.
pub fn prf_centroid(pool: &CandidatePool, corpus: &EmbeddingMatrix, k_plus: usize) -> Result<Embedding> {
    if k_plus == 0 {
        return Err(DimeError::EmptyCentroid);
    }
    if pool.len() < k_plus {
        return Err(DimeError::PoolTooShort {
            requested: k_plus,
            available: pool.len(),
        });
    }
    centroid(pool.doc_ids().take(k_plus), corpus)
}

/// Moon: mean of the bottom `k_minus` pool documents (ranks `k, k-1, .., k-k_minus+1`).
pub fn moon_centroid(pool: &CandidatePool, corpus: &EmbeddingMatrix, k_minus: usize) -> Result<Embedding> {
    if k_minus == 0 {
        return Err(DimeError::EmptyCentroid);
    }
    if pool.len() < k_minus {
        return Err(DimeError::PoolTooShort {
            requested: k_minus,
            available: pool.len(),
        });
    }
    centroid(pool.entries.iter().rev().take(k_minus).map(|e| e.doc_id.as_str()), corpus)
}

/// `u[i] = q[i] * s[i]`.
pub fn dime_score_standard(q: &[f32], sun: &[f32]) -> Result<DimensionImportance> {
    check_dims(q.len(), sun.len())?;
    Ok(DimensionImportance::new(
        q.iter()
            .zip(sun)
            .map(|(&a, &b)| f64::from(a) * f64::from(b))
            .collect(),
    ))
}

/// `u[i] = alpha * q[i] * s[i] - beta * q[i] * m[i]`.
pub fn eclipse_score(
    q: &[f32],
    sun: &[f32],
    moon: &[f32],
    alpha: f64,
    beta: f64,
) -> Result<DimensionImportance> {
    check_dims(q.len(), sun.len())?;
    check_dims(q.len(), moon.len())?;
    Ok(DimensionImportance::new(
        q.iter()
            .zip(sun)
            .zip(moon)
            .map(|((&qi, &si), &mi)| {
                let (qi, si, mi) = (f64::from(qi), f64::from(si), f64::from(mi));
                alpha * (qi * si) - beta * (qi * mi)
            })
            .collect(),
    ))
}

/// Number of dimensions kept: `floor(fraction * d + 0.5)`, clamped to `[1, d]`.
pub fn retained_count(fraction: f64, dim: usize) -> usize {
    ((fraction * dim as f64 + 0.5).floor() as usize).clamp(1, dim)
}

pub fn select_dimensions(importance: &DimensionImportance, retained_fraction: f64) -> Result<DimensionMask> {
    if !(retained_fraction > 0.0 && retained_fraction <= 1.0) {
        return Err(DimeError::InvalidFraction(retained_fraction));
    }
    let dim = importance.dim();
    let keep = retained_count(retained_fraction, dim);
    let mut ranked = importance.ranked_dimensions();
    ranked.truncate(keep);
    Ok(DimensionMask::new(ranked, dim).expect("indices come from 0..dim and keep >= 1"))
}
