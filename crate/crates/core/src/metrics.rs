//! Average precision and nDCG@k.
//!
//! * AP binarizes grades at a threshold and divides by the number of relevant
//!   documents in the qrels, retrieved or not.
//! * nDCG uses exponential gain `2^grade - 1` and discount `log2(rank + 1)`; the
//!   ideal ordering is taken over every judged document of the query.
//!
//! Both are rank-based: run scores only matter through the order they induce.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::retrieval::CandidatePool;
use crate::trec::{Qrels, RunEntry};

pub const DEFAULT_NDCG_CUTOFF: usize = 10;
/// TREC DL convention: grades 2 and 3 count as relevant for binary metrics.
pub const DEFAULT_GRADED_THRESHOLD: u32 = 2;
pub const DEFAULT_BINARY_THRESHOLD: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("run and qrels share no queries")]
    DisjointQueries,
    #[error("cutoff k must be at least 1")]
    ZeroCutoff,
}

/// A metric value; `undefined` marks the `R = 0` / `IDCG = 0` cases reported as 0.0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricValue {
    pub value: f64,
    pub undefined: bool,
}

impl MetricValue {
    fn defined(value: f64) -> Self {
        MetricValue {
            value,
            undefined: false,
        }
    }

    fn undefined() -> Self {
        MetricValue {
            value: 0.0,
            undefined: true,
        }
    }
}

pub fn average_precision_of<'a, I>(ranking: I, query_id: &str, qrels: &Qrels, threshold: u32) -> MetricValue
where
    I: IntoIterator<Item = &'a str>,
{
    let total_relevant = qrels
        .query(query_id)
        .map_or(0, |docs| docs.values().filter(|&&g| g >= threshold).count());
    if total_relevant == 0 {
        return MetricValue::undefined();
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, doc) in ranking.into_iter().enumerate() {
        if qrels.grade(query_id, doc) >= threshold {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    MetricValue::defined(sum / total_relevant as f64)
}

fn gain(grade: u32) -> f64 {
    2f64.powi(grade as i32) - 1.0
}

fn discount(rank: usize) -> f64 {
    ((rank + 1) as f64).log2()
}

pub fn ndcg_of<'a, I>(ranking: I, query_id: &str, qrels: &Qrels, k: usize) -> MetricValue
where
    I: IntoIterator<Item = &'a str>,
{
    let mut ideal: Vec<u32> = qrels
        .query(query_id)
        .map(|docs| docs.values().copied().filter(|&g| g > 0).collect())
        .unwrap_or_default();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| gain(g) / discount(i + 1))
        .sum();
    if idcg == 0.0 {
        return MetricValue::undefined();
    }
    let dcg: f64 = ranking
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(i, doc)| gain(qrels.grade(query_id, doc)) / discount(i + 1))
        .sum();
    MetricValue::defined(dcg / idcg)
}

pub fn average_precision(ranking: &CandidatePool, qrels: &Qrels, binary_threshold: u32) -> MetricValue {
    average_precision_of(ranking.doc_ids(), &ranking.query_id, qrels, binary_threshold)
}

pub fn ndcg_at_k(ranking: &CandidatePool, qrels: &Qrels, k: usize) -> MetricValue {
    ndcg_of(ranking.doc_ids(), &ranking.query_id, qrels, k)
}

/// Per-query values and their arithmetic mean.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricResult {
    pub per_query: BTreeMap<String, f64>,
    pub mean: f64,
}

impl MetricResult {
    pub fn from_per_query(per_query: BTreeMap<String, f64>) -> Self {
        let mut values: Vec<f64> = per_query.values().copied().collect();
        values.sort_unstable_by(f64::total_cmp);
        let mean = if values.is_empty() {
            0.0
        } else {
            values.iter().sum::<f64>() / values.len() as f64
        };
        MetricResult { per_query, mean }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetrics {
    pub ap: MetricResult,
    pub ndcg: MetricResult,
    /// Queries whose AP or nDCG was undefined and reported as 0.
    pub undefined: Vec<String>,
}

/// Evaluates a run over every query in `qrels`; judged queries missing from the run score 0.
pub fn evaluate_run(run: &[RunEntry], qrels: &Qrels, k: usize, binary_threshold: u32) -> Result<RunMetrics, MetricsError> {
    if k == 0 {
        return Err(MetricsError::ZeroCutoff);
    }
    let mut by_query: BTreeMap<&str, Vec<&RunEntry>> = BTreeMap::new();
    for e in run {
        by_query.entry(&e.query_id).or_default().push(e);
    }
    if !by_query.keys().any(|q| qrels.contains_query(q)) {
        return Err(MetricsError::DisjointQueries);
    }
    for entries in by_query.values_mut() {
        entries.sort_by_key(|e| e.rank);
    }

    let mut ap = BTreeMap::new();
    let mut ndcg = BTreeMap::new();
    let mut undefined = Vec::new();
    for qid in qrels.query_ids() {
        let docs: Vec<&str> = by_query
            .get(qid)
            .map(|es| es.iter().map(|e| e.doc_id.as_str()).collect())
            .unwrap_or_default();
        let a = average_precision_of(docs.iter().copied(), qid, qrels, binary_threshold);
        let n = ndcg_of(docs.iter().copied(), qid, qrels, k);
        if a.undefined || n.undefined {
            undefined.push(qid.to_owned());
        }
        ap.insert(qid.to_owned(), a.value);
        ndcg.insert(qid.to_owned(), n.value);
    }
    Ok(RunMetrics {
        ap: MetricResult::from_per_query(ap),
        ndcg: MetricResult::from_per_query(ndcg),
        undefined,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::ScoredDoc;
    use crate::trec::parse_qrels_str;
    use proptest::prelude::*;

    fn pool(q: &str, docs: &[&str]) -> CandidatePool {
        CandidatePool {
            query_id: q.into(),
            entries: docs
                .iter()
                .enumerate()
                .map(|(i, d)| ScoredDoc {
                    doc_id: (*d).into(),
                    score: (docs.len() - i) as f64,
                })
                .collect(),
        }
    }

    fn run_of(q: &str, docs: &[&str]) -> Vec<RunEntry> {
        docs.iter()
            .enumerate()
            .map(|(i, d)| RunEntry {
                query_id: q.into(),
                doc_id: (*d).into(),
                rank: i as u32 + 1,
                score: -(i as f64),
                tag: "t".into(),
            })
            .collect()
    }

    #[test]
    fn ap_examples() {
        let qrels = parse_qrels_str("q 0 A 1\nq 0 B 1\nq 0 C 0\n").unwrap();
        let ap = average_precision(&pool("q", &["A", "C", "B"]), &qrels, 1);
        assert!((ap.value - 0.8333333333333334).abs() < 1e-12);
        assert_eq!(average_precision(&pool("q", &["B", "A", "C"]), &qrels, 1).value, 1.0);
        assert_eq!(average_precision(&pool("q", &["C", "X"]), &qrels, 1).value, 0.0);
    }

    #[test]
    fn ap_without_relevant_docs_is_flagged() {
        let qrels = parse_qrels_str("q 0 A 1\n").unwrap();
        let ap = average_precision(&pool("q", &["A"]), &qrels, 2);
        assert_eq!(ap, MetricValue { value: 0.0, undefined: true });
    }

    #[test]
    fn ndcg_examples() {
        let qrels = parse_qrels_str("q 0 A 2\nq 0 C 1\nq 0 B 0\n").unwrap();
        let n = ndcg_at_k(&pool("q", &["A", "B", "C"]), &qrels, 10);
        let dcg = 3.0 + 1.0 / 4f64.log2();
        let idcg = 3.0 + 1.0 / 3f64.log2();
        assert!((idcg - 3.630930).abs() < 1e-6);
        assert!((n.value - dcg / idcg).abs() < 1e-12);
        assert!((n.value - 0.963940).abs() < 1e-6);
        assert_eq!(ndcg_at_k(&pool("q", &["A", "C", "B"]), &qrels, 10).value, 1.0);
        assert_eq!(ndcg_at_k(&pool("q", &["A", "B", "B2"]), &qrels, 1).value, 1.0);
        let none = ndcg_at_k(&pool("q", &["A"]), &parse_qrels_str("q 0 A 0").unwrap(), 10);
        assert!(none.undefined);
    }

    #[test]
    fn evaluate_run_examples() {
        let qrels = parse_qrels_str("q1 0 A 2\nq2 0 B 2\n").unwrap();
        let mut run = run_of("q1", &["A"]);
        run.extend(run_of("q2", &["X", "Y"]));
        let m = evaluate_run(&run, &qrels, 10, 2).unwrap();
        assert_eq!(m.ap.per_query["q1"], 1.0);
        assert_eq!(m.ap.per_query["q2"], 0.0);
        assert_eq!(m.ap.mean, 0.5);

        let perfect = evaluate_run(&run_of("q1", &["A"]), &parse_qrels_str("q1 0 A 2").unwrap(), 10, 2).unwrap();
        assert_eq!((perfect.ap.mean, perfect.ndcg.mean), (1.0, 1.0));

        let qrels = parse_qrels_str("q 0 A 2\nq 0 B 2\n").unwrap();
        let m = evaluate_run(&run_of("q", &["A", "C", "B"]), &qrels, 10, 2).unwrap();
        assert!((m.ap.mean - 0.833333).abs() < 1e-6);
    }

    #[test]
    fn missing_queries_score_zero_and_disjoint_errors() {
        let qrels = parse_qrels_str("q1 0 A 2\nq2 0 B 2\n").unwrap();
        let m = evaluate_run(&run_of("q1", &["A"]), &qrels, 10, 2).unwrap();
        assert_eq!(m.ap.per_query["q2"], 0.0);
        assert_eq!(m.ap.mean, 0.5);
        assert_eq!(
            evaluate_run(&run_of("zz", &["A"]), &qrels, 10, 2),
            Err(MetricsError::DisjointQueries)
        );
    }

    fn brute_ap(ranking: &[usize], relevant: &[bool]) -> f64 {
        let r = relevant.iter().filter(|x| **x).count();
        if r == 0 {
            return 0.0;
        }
        let mut total = 0.0;
        for (pos, doc) in ranking.iter().enumerate() {
            if relevant[*doc] {
                let prefix = &ranking[..=pos];
                let rel_in_prefix = prefix.iter().filter(|d| relevant[**d]).count();
                total += rel_in_prefix as f64 / prefix.len() as f64;
            }
        }
        total / r as f64
    }

    proptest! {
        #[test]
        fn ap_matches_brute_force(
            grades in proptest::collection::vec(0u32..4, 1..=20),
            perm_seed in any::<u64>(),
            retrieved in 1usize..=20,
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let n = grades.len();
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(perm_seed));
            order.truncate(retrieved.min(n));
            let mut qrels = Qrels::new();
            for (i, g) in grades.iter().enumerate() {
                qrels.insert("q", &format!("d{i}"), *g);
            }
            let ids: Vec<String> = order.iter().map(|i| format!("d{i}")).collect();
            let relevant: Vec<bool> = grades.iter().map(|g| *g >= 2).collect();
            let ap = average_precision_of(ids.iter().map(String::as_str), "q", &qrels, 2);
            prop_assert!((ap.value - brute_ap(&order, &relevant)).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&ap.value));
            let n = ndcg_of(ids.iter().map(String::as_str), "q", &qrels, 10);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&n.value));
        }

        #[test]
        fn metrics_ignore_monotone_score_transforms(
            scores in proptest::collection::vec(-1000i32..1000, 1..20),
            grades in proptest::collection::vec(0u32..4, 20),
        ) {
            let mut qrels = Qrels::new();
            for (i, g) in grades.iter().enumerate() {
                qrels.insert("q", &format!("d{i}"), *g);
            }
            let build = |f: &dyn Fn(f64) -> f64| -> Vec<RunEntry> {
                let mut docs: Vec<(String, f64)> =
                    scores.iter().enumerate().map(|(i, s)| (format!("d{i}"), f(*s as f64))).collect();
                docs.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
                docs.into_iter()
                    .enumerate()
                    .map(|(r, (d, s))| RunEntry { query_id: "q".into(), doc_id: d, rank: r as u32 + 1, score: s, tag: "t".into() })
                    .collect()
            };
            let plain = evaluate_run(&build(&|s| s), &qrels, 10, 2).unwrap();
            let warped = evaluate_run(&build(&|s| (s / 100.0).exp() * 3.0 + 7.0), &qrels, 10, 2).unwrap();
            prop_assert_eq!(plain.ap.mean, warped.ap.mean);
            prop_assert_eq!(plain.ndcg.mean, warped.ndcg.mean);
        }
    }
}
