//! Significance testing for paired per-query metrics.
//!
//! [`compare_systems`] checks the per-query differences for normality with
//! Shapiro-Wilk; if normality is not rejected it runs a one-sided paired t-test,
//! otherwise a one-sided Wilcoxon signed-rank test. The direction is always
//! "treatment greater than baseline". Families of comparisons are corrected with
//! [`holm_bonferroni`].

mod shapiro;
mod wilcoxon;

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::metrics::MetricResult;

pub use shapiro::{shapiro_wilk, ShapiroWilk};
pub use wilcoxon::{average_ranks, wilcoxon_signed_rank, EXACT_MAX_N};

pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("sample size {n} outside [{min}, {max}]")]
    SampleSize { n: usize, min: usize, max: usize },
    #[error("paired samples differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("sample has zero variance")]
    ZeroVariance,
    #[error("sample contains non-finite values")]
    NonFinite,
    #[error("degenerate test: {0}")]
    Degenerate(String),
    #[error("p-value {0} outside [0, 1]")]
    InvalidPValue(f64),
    #[error("significance level {0} outside (0, 1)")]
    InvalidAlpha(f64),
    #[error("query sets differ: {0}")]
    MismatchedQueries(String),
}

pub type Result<T> = std::result::Result<T, StatsError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    TwoSided,
    /// First sample greater than the second.
    Greater,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    TTest,
    Wilcoxon,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TestOutcome {
    pub statistic: f64,
    pub p_value: f64,
    pub test_used: TestKind,
    /// `p_value < alpha`; [`SIGNIFICANCE_LEVEL`] unless set by the caller.
    pub significant: bool,
}

impl TestOutcome {
    fn new(statistic: f64, p_value: f64, test_used: TestKind) -> Self {
        TestOutcome {
            statistic,
            p_value,
            test_used,
            significant: p_value < SIGNIFICANCE_LEVEL,
        }
    }

    pub fn at_level(mut self, alpha: f64) -> Self {
        self.significant = self.p_value < alpha;
        self
    }
}

/// Two aligned samples: `a[i]` and `b[i]` belong to the same query.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    a: Vec<f64>,
    b: Vec<f64>,
}

impl PairedSample {
    pub fn new(a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if a.len() != b.len() {
            return Err(StatsError::LengthMismatch(a.len(), b.len()));
        }
        if a.len() < 3 {
            return Err(StatsError::SampleSize {
                n: a.len(),
                min: 3,
                max: usize::MAX,
            });
        }
        if a.iter().chain(&b).any(|x| !x.is_finite()) {
            return Err(StatsError::NonFinite);
        }
        Ok(PairedSample { a, b })
    }

    #[cfg(test)]
    pub(crate) fn from_differences(d: &[f64]) -> Self {
        PairedSample {
            a: d.to_vec(),
            b: vec![0.0; d.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    /// `a[i] - b[i]`.
    pub fn differences(&self) -> Vec<f64> {
        self.a.iter().zip(&self.b).map(|(x, y)| x - y).collect()
    }
}

/// Paired Student t-test on `a - b` with `n - 1` degrees of freedom.
pub fn paired_t_test(sample: &PairedSample, alternative: Alternative) -> Result<TestOutcome> {
    let d = sample.differences();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    if var <= 0.0 {
        return Err(StatsError::Degenerate("paired differences have zero variance".into()));
    }
    let t = mean / (var.sqrt() / n.sqrt());
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).expect("n >= 3 gives df >= 2");
    let p = match alternative {
        Alternative::Greater => dist.sf(t),
        Alternative::TwoSided => (2.0 * dist.sf(t.abs())).min(1.0),
    };
    Ok(TestOutcome::new(t, p, TestKind::TTest))
}

/// Holm's step-down procedure. Returns rejections in input order.
pub fn holm_bonferroni(p_values: &[f64], alpha: f64) -> Result<Vec<bool>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(StatsError::InvalidAlpha(alpha));
    }
    if let Some(&p) = p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(StatsError::InvalidPValue(p));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| p_values[i].total_cmp(&p_values[j]).then(i.cmp(&j)));
    let mut reject = vec![false; m];
    for (step, &i) in order.iter().enumerate() {
        if p_values[i] <= alpha / (m - step) as f64 {
            reject[i] = true;
        } else {
            break;
        }
    }
    Ok(reject)
}

fn aligned(baseline: &MetricResult, treatment: &MetricResult) -> Result<PairedSample> {
    if baseline.per_query.len() != treatment.per_query.len()
        || baseline.per_query.keys().ne(treatment.per_query.keys())
    {
        let missing: Vec<&str> = baseline
            .per_query
            .keys()
            .filter(|q| !treatment.per_query.contains_key(*q))
            .chain(treatment.per_query.keys().filter(|q| !baseline.per_query.contains_key(*q)))
            .map(String::as_str)
            .take(10)
            .collect();
        return Err(StatsError::MismatchedQueries(missing.join(", ")));
    }
    PairedSample::new(
        treatment.per_query.values().copied().collect(),
        baseline.per_query.values().copied().collect(),
    )
}

/// Tests whether `treatment` beats `baseline` on per-query values.
///
/// Differences that are constant but non-zero cannot be checked for normality
/// and go to the Wilcoxon test.
pub fn compare_systems(baseline: &MetricResult, treatment: &MetricResult, alpha: f64) -> Result<TestOutcome> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(StatsError::InvalidAlpha(alpha));
    }
    let sample = aligned(baseline, treatment)?;
    let diffs = sample.differences();
    if diffs.iter().all(|d| *d == 0.0) {
        return Err(StatsError::Degenerate("systems are identical on every query".into()));
    }
    let normal = match shapiro_wilk(&diffs) {
        Ok(sw) => sw.p_value > alpha,
        Err(StatsError::ZeroVariance) => false,
        Err(e) => return Err(e),
    };
    let outcome = if normal {
        paired_t_test(&sample, Alternative::Greater)?
    } else {
        wilcoxon_signed_rank(&sample, Alternative::Greater)?
    };
    Ok(outcome.at_level(alpha))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn result(values: &[f64]) -> MetricResult {
        MetricResult::from_per_query(
            values
                .iter()
                .enumerate()
                .map(|(i, v)| (format!("q{i:03}"), *v))
                .collect::<BTreeMap<_, _>>(),
        )
    }

    #[test]
    fn t_test_fixture() {
        let s = PairedSample::new(vec![1.0, 2.0, 4.0], vec![0.0, 1.0, 2.0]).unwrap();
        let r = paired_t_test(&s, Alternative::Greater).unwrap();
        assert!((r.statistic - 4.0).abs() < 1e-12);
        assert!((r.p_value - 0.028595479208968315).abs() < 1e-9);
        let two = paired_t_test(&s, Alternative::TwoSided).unwrap();
        assert!((two.p_value - 0.05719095841793663).abs() < 1e-9);
    }

    #[test]
    fn t_test_zero_mean() {
        let s = PairedSample::new(vec![-1.0, 0.0, 1.0], vec![0.0, 0.0, 0.0]).unwrap();
        let r = paired_t_test(&s, Alternative::TwoSided).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!((r.p_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn t_test_degenerate() {
        let s = PairedSample::new(vec![2.0, 3.0, 4.0], vec![1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(paired_t_test(&s, Alternative::Greater), Err(StatsError::Degenerate(_))));
    }

    #[test]
    fn paired_sample_validation() {
        assert_eq!(PairedSample::new(vec![1.0; 3], vec![1.0; 4]), Err(StatsError::LengthMismatch(3, 4)));
        assert!(matches!(PairedSample::new(vec![1.0; 2], vec![1.0; 2]), Err(StatsError::SampleSize { .. })));
    }

    #[test]
    fn holm_examples() {
        assert_eq!(holm_bonferroni(&[0.01, 0.04], 0.05).unwrap(), [true, true]);
        assert_eq!(holm_bonferroni(&[0.03, 0.04], 0.05).unwrap(), [false, false]);
        assert_eq!(holm_bonferroni(&[0.049], 0.05).unwrap(), [true]);
        assert_eq!(holm_bonferroni(&[0.2, 0.01, 0.04], 0.05).unwrap(), [false, true, false]);
        assert!(holm_bonferroni(&[1.2], 0.05).is_err());
        assert!(holm_bonferroni(&[0.1], 1.0).is_err());
    }

    const NEAR_NORMAL_DIFFS: [f64; 30] = [
        0.034, 0.0235, 0.045, 0.0584, 0.0727, 0.0522, 0.0389, 0.0343, 0.065, 0.0827, 0.0555, 0.0253, 0.0308,
        0.082, 0.0541, 0.0154, 0.0483, 0.0267, 0.0374, 0.0402, 0.0357, 0.0611, 0.0487, 0.0382, 0.0582, 0.0666,
        0.0171, 0.0449, 0.0304, 0.0465,
    ];

    #[test]
    fn dominating_treatment_is_significant_via_t_test() {
        let base: Vec<f64> = (0..30).map(|i| 0.3 + 0.01 * i as f64).collect();
        let treat: Vec<f64> = base.iter().zip(NEAR_NORMAL_DIFFS).map(|(b, d)| b + d).collect();
        let r = compare_systems(&result(&base), &result(&treat), 0.05).unwrap();
        assert_eq!(r.test_used, TestKind::TTest);
        assert!(r.significant);
        // scipy: t = 14.1675, p = 7.26e-15
        assert!((r.statistic - 14.16745214880203).abs() < 1e-6);
        assert!(r.p_value < 1e-12);
    }

    #[test]
    fn heavy_tailed_diffs_use_wilcoxon() {
        let h = [
            0.01, -0.02, 0.015, 0.0, 0.005, -0.01, 0.02, 0.01, 0.6, -0.005, 0.012, 0.008, -0.015, 0.9, 0.003,
            0.007, -0.004, 0.011, 0.018, -0.45, 0.006, 0.009, 0.004, 0.013, -0.008, 0.016, 0.002, 0.014, 0.001,
            0.75,
        ];
        let sw = shapiro_wilk(&h).unwrap();
        assert!((sw.p_value - 8.522839417788117e-09).abs() < 1e-3);
        let r = compare_systems(&result(&[0.0; 30]), &result(&h), 0.05).unwrap();
        assert_eq!(r.test_used, TestKind::Wilcoxon);
        assert!(r.significant);
    }

    #[test]
    fn identical_systems_are_degenerate() {
        let v = [0.1, 0.5, 0.3, 0.9];
        assert!(matches!(
            compare_systems(&result(&v), &result(&v), 0.05),
            Err(StatsError::Degenerate(_))
        ));
    }

    #[test]
    fn mismatched_queries() {
        let a = result(&[0.1, 0.2, 0.3]);
        let mut b = a.clone();
        b.per_query.insert("extra".into(), 0.5);
        assert!(matches!(compare_systems(&a, &b, 0.05), Err(StatsError::MismatchedQueries(_))));
    }

    /// Enumerates all 2^n sign assignments of the ranks.
    fn brute_wilcoxon_greater(diffs: &[f64]) -> f64 {
        let d: Vec<f64> = diffs.iter().copied().filter(|x| *x != 0.0).collect();
        let ranks = average_ranks(&d.iter().map(|x| x.abs()).collect::<Vec<_>>());
        let observed: f64 = d.iter().zip(&ranks).filter(|(x, _)| **x > 0.0).map(|(_, r)| r).sum();
        let n = d.len();
        let mut at_least = 0u64;
        for mask in 0u64..(1 << n) {
            let w: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
            if w >= observed - 1e-9 {
                at_least += 1;
            }
        }
        at_least as f64 / (1u64 << n) as f64
    }

    proptest! {
        #[test]
        fn wilcoxon_exact_matches_enumeration(
            d in proptest::collection::vec(-6i32..=6, 1..=12)
        ) {
            let d: Vec<f64> = d.into_iter().map(f64::from).collect();
            prop_assume!(d.iter().any(|x| *x != 0.0));
            let r = wilcoxon_signed_rank(&PairedSample::from_differences(&d), Alternative::Greater).unwrap();
            prop_assert!((r.p_value - brute_wilcoxon_greater(&d)).abs() < 1e-12);
        }

        #[test]
        fn holm_is_monotone(
            p in proptest::collection::vec(0.0f64..=1.0, 1..10),
            which in any::<prop::sample::Index>(),
            shrink in 0.0f64..=1.0,
        ) {
            let before = holm_bonferroni(&p, 0.05).unwrap();
            let mut lowered = p.clone();
            let i = which.index(p.len());
            lowered[i] *= shrink;
            let after = holm_bonferroni(&lowered, 0.05).unwrap();
            for (b, a) in before.iter().zip(&after) {
                prop_assert!(!b || *a);
            }
        }

        #[test]
        fn t_test_shift_invariant(
            a in proptest::collection::vec(-100i32..100, 3..20),
            b_off in proptest::collection::vec(-100i32..100, 20),
            shift in -50i32..50,
        ) {
            let a: Vec<f64> = a.into_iter().map(|x| f64::from(x) / 10.0).collect();
            let b: Vec<f64> = b_off[..a.len()].iter().map(|x| f64::from(*x) / 10.0).collect();
            let s = PairedSample::new(a.clone(), b.clone()).unwrap();
            let Ok(plain) = paired_t_test(&s, Alternative::TwoSided) else { return Ok(()); };
            let c = f64::from(shift) / 4.0;
            let shifted = PairedSample::new(
                a.iter().map(|x| x + c).collect(),
                b.iter().map(|x| x + c).collect(),
            ).unwrap();
            let moved = paired_t_test(&shifted, Alternative::TwoSided).unwrap();
            prop_assert!((plain.p_value - moved.p_value).abs() < 1e-9);
        }

        #[test]
        fn two_sided_t_symmetric_under_sign_flip(d in proptest::collection::vec(-50i32..50, 3..15)) {
            let d: Vec<f64> = d.into_iter().map(f64::from).collect();
            let zeros = vec![0.0; d.len()];
            let pos = PairedSample::new(d.clone(), zeros.clone()).unwrap();
            let neg = PairedSample::new(d.iter().map(|x| -x).collect(), zeros).unwrap();
            let (Ok(p), Ok(n)) = (paired_t_test(&pos, Alternative::TwoSided), paired_t_test(&neg, Alternative::TwoSided)) else {
                return Ok(());
            };
            prop_assert!((p.p_value - n.p_value).abs() < 1e-12);
        }
    }
}
