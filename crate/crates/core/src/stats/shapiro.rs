//! Shapiro-Wilk W test, Royston's AS R94 algorithm (valid for 3 <= n <= 5000).

use statrs::distribution::{ContinuousCDF, Normal};

use super::{Result, StatsError};

const C1: [f64; 6] = [0.0, 0.221157, -0.147981, -2.07119, 4.434685, -2.706056];
const C2: [f64; 6] = [0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633];
const C3: [f64; 4] = [0.544, -0.39978, 0.025054, -6.714e-4];
const C4: [f64; 4] = [1.3822, -0.77857, 0.062767, -0.0020322];
const C5: [f64; 4] = [-1.5861, -0.31082, -0.083751, 0.0038915];
const C6: [f64; 3] = [-0.4803, -0.082676, 0.0030302];
const G: [f64; 2] = [-2.273, 0.459];

/// Polynomial with coefficients in ascending order.
fn poly(coefficients: &[f64], x: f64) -> f64 {
    coefficients.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapiroWilk {
    pub w: f64,
    pub p_value: f64,
}

/// Antisymmetric weights for the upper half of the order statistics.
fn coefficients(n: usize, normal: &Normal) -> Vec<f64> {
    let half = n / 2;
    if n == 3 {
        return vec![std::f64::consts::FRAC_1_SQRT_2];
    }
    let nf = n as f64;
    let m: Vec<f64> = (1..=half)
        .map(|i| -normal.inverse_cdf((i as f64 - 0.375) / (nf + 0.25)))
        .collect();
    let summ2 = 2.0 * m.iter().map(|x| x * x).sum::<f64>();
    let ssumm2 = summ2.sqrt();
    let rsn = 1.0 / nf.sqrt();
    let a1 = poly(&C1, rsn) + m[0] / ssumm2;

    let mut a = vec![0.0; half];
    a[0] = a1;
    let (first, fac) = if n > 5 {
        let a2 = m[1] / ssumm2 + poly(&C2, rsn);
        a[1] = a2;
        let fac = ((summ2 - 2.0 * m[0] * m[0] - 2.0 * m[1] * m[1])
            / (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2))
            .sqrt();
        (2, fac)
    } else {
        let fac = ((summ2 - 2.0 * m[0] * m[0]) / (1.0 - 2.0 * a1 * a1)).sqrt();
        (1, fac)
    };
    for i in first..half {
        a[i] = m[i] / fac;
    }
    a
}

pub fn shapiro_wilk(sample: &[f64]) -> Result<ShapiroWilk> {
    let n = sample.len();
    if !(3..=5000).contains(&n) {
        return Err(StatsError::SampleSize { n, min: 3, max: 5000 });
    }
    if sample.iter().any(|x| !x.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let mut x = sample.to_vec();
    x.sort_unstable_by(f64::total_cmp);
    let range = x[n - 1] - x[0];
    if range <= 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    // Scale by the range for conditioning; W is scale invariant.
    for v in &mut x {
        *v /= range;
    }

    let normal = Normal::standard();
    let a = coefficients(n, &normal);
    let mean = x.iter().sum::<f64>() / n as f64;
    let ssq: f64 = x.iter().map(|v| (v - mean) * (v - mean)).sum();
    let numerator: f64 = a
        .iter()
        .enumerate()
        .map(|(i, ai)| ai * (x[n - 1 - i] - x[i]))
        .sum();
    let w = (numerator * numerator / ssq).min(1.0);

    let p_value = if n == 3 {
        const SIX_OVER_PI: f64 = 6.0 / std::f64::consts::PI;
        let p = SIX_OVER_PI * (w.sqrt().asin() - std::f64::consts::FRAC_PI_3);
        p.clamp(0.0, 1.0)
    } else {
        let nf = n as f64;
        let mut y = (1.0 - w).ln();
        let (mean, sd) = if n <= 11 {
            let gamma = poly(&G, nf);
            if y >= gamma {
                return Ok(ShapiroWilk { w, p_value: 1e-99 });
            }
            y = -(gamma - y).ln();
            (poly(&C3, nf), poly(&C4, nf).exp())
        } else {
            let ln_n = nf.ln();
            (poly(&C5, ln_n), poly(&C6, ln_n).exp())
        };
        normal.sf((y - mean) / sd)
    };
    Ok(ShapiroWilk { w, p_value })
}

#[cfg(test)]
mod tests {
    use super::*;

    // Reference values from scipy.stats.shapiro (scipy 1.15).
    const FIXTURES: &[(&[f64], f64, f64)] = &[
        (&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0], 0.9701646111, 0.8923673062),
        (&[-1.5, -1.0, -0.6, -0.3, -0.1, 0.1, 0.3, 0.6, 1.0, 1.5], 0.9956196286, 0.9998938662),
        (&[1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 100.0], 0.3657206277, 0.0000001004),
        (&[2.1, 3.4, 1.9, 5.6, 4.4, 3.3, 2.8, 4.9, 3.7, 4.1, 2.2, 3.0], 0.9649272704, 0.8511381677),
        (&[0.5, 1.2, 3.3], 0.9230769231, 0.4632628749),
        (&[1.0, 2.0, 4.0, 7.0], 0.9456304829, 0.6889364385),
        (&[1.0, 1.1, 1.3, 2.0, 5.0], 0.7339471640, 0.0209923228),
        (&[3.1, 2.7, 4.5, 1.2, 8.9, 0.3, 2.2], 0.8797426181, 0.2253081378),
    ];

    #[test]
    fn matches_reference_fixtures() {
        for (sample, w, p) in FIXTURES {
            let r = shapiro_wilk(sample).unwrap();
            assert!((r.w - w).abs() < 1e-3, "{sample:?}: W {} vs {w}", r.w);
            assert!((r.p_value - p).abs() < 1e-3, "{sample:?}: p {} vs {p}", r.p_value);
        }
    }

    #[test]
    fn skewed_sample_rejects_normality() {
        let r = shapiro_wilk(&[1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 100.0]).unwrap();
        assert!(r.p_value < 0.05);
    }

    #[test]
    fn invalid_inputs() {
        assert!(matches!(shapiro_wilk(&[1.0, 2.0]), Err(StatsError::SampleSize { n: 2, .. })));
        assert!(matches!(shapiro_wilk(&[3.0; 8]), Err(StatsError::ZeroVariance)));
        assert!(matches!(shapiro_wilk(&vec![0.0; 5001]), Err(StatsError::SampleSize { .. })));
    }

    #[test]
    fn order_and_scale_invariant() {
        let a = shapiro_wilk(&[3.1, 2.7, 4.5, 1.2, 8.9, 0.3, 2.2]).unwrap();
        let b = shapiro_wilk(&[0.3 * 7.0, 8.9 * 7.0, 2.2 * 7.0, 1.2 * 7.0, 3.1 * 7.0, 4.5 * 7.0, 2.7 * 7.0]).unwrap();
        assert!((a.w - b.w).abs() < 1e-12);
        assert!((a.p_value - b.p_value).abs() < 1e-12);
    }
}
