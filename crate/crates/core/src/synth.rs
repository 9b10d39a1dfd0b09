//! Synthetic corpora with planted query-dependent subspaces.
//!
//! Each query owns a random `r`-subset `S` of the `d` dimensions. The query and
//! its relevant documents draw `Normal(mu, 0.1 |mu|)` on `S` and
//! `Normal(0, sigma)` elsewhere. Each irrelevant document is `Normal(0, sigma)`
//! everywhere except a distractor subset disjoint from `S`, where it draws
//! `Normal(mu, 0.1 |mu|)`.
//!
//! Every vector is generated from its own ChaCha stream keyed by
//! `(seed, query index, document index)`, so output does not depend on
//! generation order or thread count.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::store::EmbeddingMatrix;
use crate::trec::Qrels;

pub const RELEVANT_GRADE: u32 = 2;

// Stream index reserved for the query vector and its planted subset.
const QUERY_STREAM: u64 = u64::MAX;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("planted size {planted} must be in [1, {dim})")]
    PlantedSize { planted: usize, dim: usize },
    #[error("{0} must be at least 1")]
    ZeroCount(&'static str),
    #[error("noise sigma must be finite and non-negative, got {0}")]
    InvalidSigma(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub dim: usize,
    pub planted_size: usize,
    pub queries: usize,
    pub relevant_per_query: usize,
    pub irrelevant_per_query: usize,
    pub noise_sigma: f64,
    pub signal_mean: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            dim: 128,
            planted_size: 16,
            queries: 50,
            relevant_per_query: 10,
            irrelevant_per_query: 490,
            noise_sigma: 0.05,
            signal_mean: 1.0,
            seed: 7,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.planted_size == 0 || self.planted_size >= self.dim {
            return Err(SynthError::PlantedSize {
                planted: self.planted_size,
                dim: self.dim,
            });
        }
        for (name, count) in [
            ("queries", self.queries),
            ("relevant_per_query", self.relevant_per_query),
            ("irrelevant_per_query", self.irrelevant_per_query),
        ] {
            if count == 0 {
                return Err(SynthError::ZeroCount(name));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(SynthError::InvalidSigma(self.noise_sigma));
        }
        Ok(())
    }

    pub fn docs_per_query(&self) -> usize {
        self.relevant_per_query + self.irrelevant_per_query
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub queries: EmbeddingMatrix,
    pub corpus: EmbeddingMatrix,
    pub qrels: Qrels,
    /// Planted dimensions per query id, ascending.
    pub planted: BTreeMap<String, Vec<usize>>,
}

pub fn query_id(q: usize) -> String {
    format!("q{q:04}")
}

pub fn doc_id(q: usize, j: usize, relevant_per_query: usize) -> String {
    if j < relevant_per_query {
        format!("q{q:04}-rel{j:04}")
    } else {
        format!("q{q:04}-irr{:04}", j - relevant_per_query)
    }
}

fn stream(seed: u64, query: u64, doc: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&query.to_le_bytes());
    key[16..24].copy_from_slice(&doc.to_le_bytes());
    key[24..].copy_from_slice(b"synthgen");
    ChaCha8Rng::from_seed(key)
}

/// One vector: signal on `signal_dims` (a boolean membership table), noise elsewhere.
fn draw(rng: &mut ChaCha8Rng, signal_dims: &[bool], spec: &SynthSpec) -> Vec<f32> {
    let signal_sd = 0.1 * spec.signal_mean.abs();
    signal_dims
        .iter()
        .map(|&on| {
            let z: f64 = rng.sample(StandardNormal);
            let v = if on {
                spec.signal_mean + signal_sd * z
            } else {
                spec.noise_sigma * z
            };
            v as f32
        })
        .collect()
}

fn membership(dims: &[usize], d: usize) -> Vec<bool> {
    let mut on = vec![false; d];
    for &i in dims {
        on[i] = true;
    }
    on
}

/// Query vector and its planted subset.
fn query_vector(spec: &SynthSpec, q: usize) -> (Vec<usize>, Vec<f32>) {
    let mut rng = stream(spec.seed, q as u64, QUERY_STREAM);
    let mut planted = index::sample(&mut rng, spec.dim, spec.planted_size).into_vec();
    planted.sort_unstable();
    let v = draw(&mut rng, &membership(&planted, spec.dim), spec);
    (planted, v)
}

fn document_vector(spec: &SynthSpec, q: usize, j: usize, planted: &[usize]) -> Vec<f32> {
    let mut rng = stream(spec.seed, q as u64, j as u64);
    if j < spec.relevant_per_query {
        return draw(&mut rng, &membership(planted, spec.dim), spec);
    }
    let outside: Vec<usize> = (0..spec.dim).filter(|i| planted.binary_search(i).is_err()).collect();
    let size = spec.planted_size.min(outside.len());
    let distractor: Vec<usize> = index::sample(&mut rng, outside.len(), size)
        .into_iter()
        .map(|k| outside[k])
        .collect();
    draw(&mut rng, &membership(&distractor, spec.dim), spec)
}

pub fn generate(spec: &SynthSpec) -> Result<SynthCorpus, SynthError> {
    spec.validate()?;
    let per_query: Vec<(Vec<usize>, Vec<f32>)> = (0..spec.queries)
        .into_par_iter()
        .map(|q| query_vector(spec, q))
        .collect();

    let per_doc = spec.docs_per_query();
    let docs: Vec<Vec<f32>> = (0..spec.queries * per_doc)
        .into_par_iter()
        .map(|k| {
            let (q, j) = (k / per_doc, k % per_doc);
            document_vector(spec, q, j, &per_query[q].0)
        })
        .collect();

    let mut qrels = Qrels::new();
    let mut doc_ids = Vec::with_capacity(docs.len());
    for q in 0..spec.queries {
        for j in 0..per_doc {
            let id = doc_id(q, j, spec.relevant_per_query);
            let grade = if j < spec.relevant_per_query { RELEVANT_GRADE } else { 0 };
            qrels.insert(&query_id(q), &id, grade);
            doc_ids.push(id);
        }
    }

    let mut planted = BTreeMap::new();
    let mut query_ids = Vec::with_capacity(spec.queries);
    let mut query_data = Vec::with_capacity(spec.queries * spec.dim);
    for (q, (dims, v)) in per_query.into_iter().enumerate() {
        query_ids.push(query_id(q));
        query_data.extend(v);
        planted.insert(query_id(q), dims);
    }

    let queries = EmbeddingMatrix::new(query_ids, spec.dim, query_data).expect("generated ids are unique");
    let corpus = EmbeddingMatrix::new(doc_ids, spec.dim, docs.concat()).expect("generated ids are unique");
    Ok(SynthCorpus {
        queries,
        corpus,
        qrels,
        planted,
    })
}
