//! Query-dependent dimension importance estimation for dense retrieval.
//!
//! The crate scores embedding dimensions per query with standard DIME (PRF or
//! LLM sun vector) or with ECLIPSE, which subtracts a "moon" centroid built
//! from the bottom of the candidate pool. The selected dimensions drive an exact
//! masked re-retrieval that is evaluated with AP and nDCG@10 and compared with
//! paired significance tests.

pub mod dime;
pub mod metrics;
pub mod retrieval;
pub mod runner;
pub mod stats;
pub mod store;
pub mod synth;
pub mod trec;
