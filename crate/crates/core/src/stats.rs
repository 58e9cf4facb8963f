//! Small statistical helpers: Monte-Carlo summaries, isotonic trend tests,
//! percentile bootstrap and the Kolmogorov–Smirnov statistic.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

/// Mean and standard error (unbiased variance over `sqrt(n)`).
/// The standard error is `NaN` for fewer than two values.
pub fn mean_se(values: &[f64]) -> MeanSe {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    MeanSe {
        mean,
        se: (var / n).sqrt(),
    }
}

/// Weighted least-squares non-decreasing fit by pool-adjacent-violators.
pub fn isotonic_increasing(y: &[f64], w: &[f64]) -> Vec<f64> {
    assert_eq!(y.len(), w.len());
    // Each block: (weighted mean, total weight, count).
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(y.len());
    for (&v, &wt) in y.iter().zip(w) {
        blocks.push((v, wt, 1));
        while blocks.len() > 1 {
            let n = blocks.len();
            let (m2, w2, c2) = blocks[n - 1];
            let (m1, w1, c1) = blocks[n - 2];
            if m1 <= m2 {
                break;
            }
            let wt = w1 + w2;
            blocks.truncate(n - 2);
            blocks.push(((m1 * w1 + m2 * w2) / wt, wt, c1 + c2));
        }
    }
    blocks
        .into_iter()
        .flat_map(|(m, _, c)| std::iter::repeat_n(m, c))
        .collect()
}

/// Weighted least-squares non-increasing fit.
pub fn isotonic_decreasing(y: &[f64], w: &[f64]) -> Vec<f64> {
    let neg: Vec<f64> = y.iter().map(|v| -v).collect();
    isotonic_increasing(&neg, w).into_iter().map(|v| -v).collect()
}

fn weighted_sse(y: &[f64], w: &[f64], fit: &[f64]) -> f64 {
    y.iter()
        .zip(w)
        .zip(fit)
        .map(|((a, wt), b)| wt * (a - b).powi(2))
        .sum()
}

/// Outcome of a monotone trend test over ordered groups of replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendTest {
    pub group_means: Vec<f64>,
    /// Residual sum of squares of the fit in the hypothesised direction.
    pub sse_hypothesis: f64,
    /// Residual sum of squares of the fit in the opposite direction.
    pub sse_opposite: f64,
    /// For every consecutive pair, whether the later group's replicate band
    /// moves in the hypothesised direction or overlaps the earlier one.
    pub pairwise_ok: Vec<bool>,
    pub pass: bool,
}

/// Tests that replicate groups are non-increasing in their order.
///
/// Passes when the antitonic fit explains the group means at least as well
/// as the isotonic fit and every consecutive pair of replicate ranges
/// either overlaps or moves downwards.
pub fn non_increasing_trend(groups: &[Vec<f64>]) -> TrendTest {
    let means: Vec<f64> = groups.iter().map(|g| mean_se(g).mean).collect();
    let w: Vec<f64> = groups.iter().map(|g| g.len() as f64).collect();
    let sse_dec = weighted_sse(&means, &w, &isotonic_decreasing(&means, &w));
    let sse_inc = weighted_sse(&means, &w, &isotonic_increasing(&means, &w));
    let pairwise_ok: Vec<bool> = groups
        .windows(2)
        .map(|p| {
            let prev_max = p[0].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let next_min = p[1].iter().cloned().fold(f64::INFINITY, f64::min);
            next_min <= prev_max
        })
        .collect();
    let pass = sse_dec <= sse_inc && pairwise_ok.iter().all(|&b| b);
    TrendTest {
        group_means: means,
        sse_hypothesis: sse_dec,
        sse_opposite: sse_inc,
        pairwise_ok,
        pass,
    }
}

/// Tests that replicate groups are non-decreasing in their order.
pub fn non_decreasing_trend(groups: &[Vec<f64>]) -> TrendTest {
    let neg: Vec<Vec<f64>> = groups
        .iter()
        .map(|g| g.iter().map(|v| -v).collect())
        .collect();
    let mut t = non_increasing_trend(&neg);
    t.group_means.iter_mut().for_each(|m| *m = -*m);
    t
}

/// Percentile bootstrap confidence interval for the mean.
pub fn bootstrap_mean_ci<R: Rng + ?Sized>(
    values: &[f64],
    replicates: usize,
    level: f64,
    rng: &mut R,
) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mut means: Vec<f64> = (0..replicates)
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let tail = 0.5 * (1.0 - level);
    let pick = |q: f64| {
        let idx = (q * (replicates as f64 - 1.0)).round() as usize;
        means[idx.min(replicates - 1)]
    };
    (pick(tail), pick(1.0 - tail))
}

/// One-sample Kolmogorov–Smirnov statistic against a continuous CDF.
pub fn ks_statistic<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = cdf(v);
            (f - i as f64 / n).max((i as f64 + 1.0) / n - f)
        })
        .fold(0.0, f64::max)
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic critical value `c(alpha) * sqrt(effective 1/n)` of the KS test,
/// with `c(alpha) = sqrt(-ln(alpha/2)/2)`.
pub fn ks_critical(n_eff: f64, alpha: f64) -> f64 {
    (-(alpha / 2.0).ln() / 2.0).sqrt() / n_eff.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng_from_seed;
    use proptest::prelude::*;

    #[test]
    fn mean_se_known() {
        let m = mean_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.mean, 2.5);
        assert!((m.se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn pava_examples() {
        let w = [1.0; 4];
        assert_eq!(isotonic_increasing(&[1.0, 3.0, 2.0, 4.0], &w), vec![1.0, 2.5, 2.5, 4.0]);
        assert_eq!(isotonic_decreasing(&[4.0, 2.0, 3.0, 1.0], &w), vec![4.0, 2.5, 2.5, 1.0]);
    }

    #[test]
    fn trend_tests() {
        let dec = vec![vec![1.0, 1.2], vec![0.5, 0.7], vec![0.3, 0.35]];
        assert!(non_increasing_trend(&dec).pass);
        assert!(!non_decreasing_trend(&dec).pass);
        let inc: Vec<Vec<f64>> = dec.iter().rev().cloned().collect();
        assert!(non_decreasing_trend(&inc).pass);
        // Noisy but overlapping bump still passes.
        let bump = vec![vec![1.0, 0.6], vec![0.7, 0.5], vec![0.2, 0.3]];
        assert!(non_increasing_trend(&bump).pass);
    }

    #[test]
    fn bootstrap_covers_mean() {
        let mut rng = rng_from_seed(4);
        let v: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let (lo, hi) = bootstrap_mean_ci(&v, 1000, 0.95, &mut rng);
        assert!(lo < 24.5 && 24.5 < hi);
    }

    #[test]
    fn ks_uniform_grid() {
        let s: Vec<f64> = (0..100).map(|i| (i as f64 + 0.5) / 100.0).collect();
        assert!((ks_statistic(&s, |x| x.clamp(0.0, 1.0)) - 0.005).abs() < 1e-12);
        assert_eq!(ks_two_sample(&s, &s), 0.0);
    }

    proptest! {
        #[test]
        fn isotonic_fit_is_monotone(y in proptest::collection::vec(-10.0f64..10.0, 1..30)) {
            let w = vec![1.0; y.len()];
            let fit = isotonic_increasing(&y, &w);
            prop_assert_eq!(fit.len(), y.len());
            for p in fit.windows(2) {
                prop_assert!(p[0] <= p[1] + 1e-12);
            }
            let sy: f64 = y.iter().sum();
            let sf: f64 = fit.iter().sum();
            prop_assert!((sy - sf).abs() < 1e-9);
        }
    }
}
