use statrs::distribution::{ContinuousCDF, Normal};

use super::{Alternative, PairedSample, Result, StatsError, TestKind, TestOutcome};

/// Largest number of non-zero differences for which the null distribution is enumerated.
pub const EXACT_MAX_N: usize = 20;

/// Average ranks of `values` (1-based); tied values share the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let shared = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = shared;
        }
        start = end;
    }
    ranks
}

/// Number of sign assignments reaching each doubled rank sum.
///
/// Doubled ranks are integers even with ties, so the distribution is exact.
fn signed_rank_counts(doubled_ranks: &[usize]) -> Vec<f64> {
    let total: usize = doubled_ranks.iter().sum();
    let mut counts = vec![0.0f64; total + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &r in doubled_ranks {
        for s in (0..=reach).rev() {
            let c = counts[s];
            if c != 0.0 {
                counts[s + r] += c;
            }
        }
        reach += r;
    }
    counts
}

/// Wilcoxon signed-rank test on `a - b`.
///
/// Zero differences are discarded. With at most [`EXACT_MAX_N`] remaining
/// differences the p-value is exact; beyond that a normal approximation with tie
/// and continuity corrections is used. The statistic is `W+`, the rank sum of
/// positive differences.
pub fn wilcoxon_signed_rank(sample: &PairedSample, alternative: Alternative) -> Result<TestOutcome> {
    let diffs: Vec<f64> = sample.differences().into_iter().filter(|d| *d != 0.0).collect();
    if diffs.is_empty() {
        return Err(StatsError::Degenerate("all paired differences are zero".into()));
    }
    let n = diffs.len();
    let magnitudes: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&magnitudes);
    let w_plus: f64 = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();

    let p_value = if n <= EXACT_MAX_N {
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let counts = signed_rank_counts(&doubled);
        let total = 2f64.powi(n as i32);
        let observed = (2.0 * w_plus).round() as usize;
        let upper = counts[observed..].iter().sum::<f64>() / total;
        let lower = counts[..=observed].iter().sum::<f64>() / total;
        match alternative {
            Alternative::Greater => upper,
            Alternative::TwoSided => (2.0 * upper.min(lower)).min(1.0),
        }
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let mut tie_term = 0.0;
        let mut sorted = magnitudes.clone();
        sorted.sort_unstable_by(f64::total_cmp);
        for group in sorted.chunk_by(|a, b| a == b) {
            let t = group.len() as f64;
            tie_term += t * t * t - t;
        }
        let sd = (nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0).sqrt();
        let normal = Normal::standard();
        match alternative {
            Alternative::Greater => normal.sf((w_plus - mean - 0.5) / sd),
            Alternative::TwoSided => {
                let z = ((w_plus - mean).abs() - 0.5).max(0.0) / sd;
                (2.0 * normal.sf(z)).min(1.0)
            }
        }
    };
    Ok(TestOutcome::new(w_plus, p_value.clamp(0.0, 1.0), TestKind::Wilcoxon))
}
