//! Small statistical helpers shared by the sampler, the estimators and the
//! bound machinery: batch means for autocorrelated series, effective sample
//! size, a Kolmogorov-Smirnov statistic, Gauss-Legendre rules and the block
//! partition used for deterministic reductions and the block bootstrap.

use std::ops::Range;

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Mean and batch-means standard error of the mean.
///
/// The series is split into at least 20 equal batches (`~sqrt(n)` when that
/// is larger); batch means absorb the autocorrelation a Metropolis chain
/// carries. For fewer than 40 points this degrades to the i.i.d. formula.
pub fn batch_means(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let m = mean(xs);
    if n == 1 {
        return (m, 0.0);
    }
    let b = batch_count(n);
    let size = n / b;
    if size < 2 {
        // i.i.d. fallback
        let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
        return (m, (var / n as f64).sqrt());
    }
    let used = b * size;
    let batch_means: Vec<f64> = (0..b)
        .map(|i| xs[i * size..(i + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let bm = mean(&batch_means);
    let var = batch_means
        .iter()
        .map(|x| (x - bm) * (x - bm))
        .sum::<f64>()
        / (b - 1) as f64;
    let _ = used;
    (m, (var / b as f64).sqrt())
}

fn batch_count(n: usize) -> usize {
    let root = (n as f64).sqrt() as usize;
    root.max(20).min(n)
}

/// Contiguous block ranges covering `0..n`, used both for deterministic
/// chunked reductions and as the resampling unit of the block bootstrap.
pub fn block_ranges(n: usize, target_blocks: usize) -> Vec<Range<usize>> {
    assert!(n > 0 && target_blocks > 0);
    let b = target_blocks.min(n);
    let base = n / b;
    let extra = n % b;
    let mut out = Vec::with_capacity(b);
    let mut start = 0;
    for i in 0..b {
        let len = base + usize::from(i < extra);
        out.push(start..start + len);
        start += len;
    }
    out
}

/// Integrated autocorrelation time by Geyer's initial monotone positive
/// sequence, with the lag capped at `min(n/2, 4000)`. Returns at least 1.
pub fn integrated_autocorr_time(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 4 {
        return 1.0;
    }
    let m = mean(xs);
    let centered: Vec<f64> = xs.iter().map(|x| x - m).collect();
    let gamma = |lag: usize| -> f64 {
        centered[..n - lag]
            .iter()
            .zip(&centered[lag..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / n as f64
    };
    let g0 = gamma(0);
    if g0 <= 0.0 {
        return 1.0;
    }
    let max_lag = (n / 2).min(4000);
    let mut sum = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut lag = 0;
    while lag + 1 < max_lag {
        let pair = gamma(lag) + gamma(lag + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        sum += pair;
        prev_pair = pair;
        lag += 2;
    }
    (2.0 * sum / g0 - 1.0).max(1.0)
}

/// Effective sample size of a scalar series.
pub fn ess(xs: &[f64]) -> f64 {
    xs.len() as f64 / integrated_autocorr_time(xs)
}

/// Two-sided Kolmogorov-Smirnov statistic of `xs` against the CDF `f`.
pub fn ks_statistic(xs: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        let cdf = f(x);
        d = d.max(cdf - i as f64 / n);
        d = d.max((i + 1) as f64 / n - cdf);
    }
    d
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Legendre recurrence for P_n(x) and P'_n(x)
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let k = k as f64;
                let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    // n odd: middle node is 0 and got written twice, which is fine
    (nodes, weights)
}

/// Map a `[-1, 1]` rule onto `[a, b]`.
pub fn gauss_legendre_on(a: f64, b: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let (xs, ws) = gauss_legendre(n);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    (
        xs.iter().map(|x| mid + half * x).collect(),
        ws.iter().map(|w| w * half).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg_series(n: usize, mut state: u64) -> Vec<f64> {
        (0..n)
            .map(|_| {
                state = state
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                (state >> 11) as f64 / (1u64 << 53) as f64
            })
            .collect()
    }

    #[test]
    fn batch_means_iid_matches_classic() {
        let xs = lcg_series(4000, 1);
        let (m, se) = batch_means(&xs);
        let classic_var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64;
        let classic_se = (classic_var / xs.len() as f64).sqrt();
        // uncorrelated data: batch means should be within a factor ~1.5
        assert!(se > 0.5 * classic_se && se < 1.5 * classic_se, "{se} vs {classic_se}");
    }

    #[test]
    fn block_ranges_partition() {
        for (n, b) in [(10, 3), (100, 7), (5, 20), (1, 1)] {
            let ranges = block_ranges(n, b);
            assert_eq!(ranges.first().unwrap().start, 0);
            assert_eq!(ranges.last().unwrap().end, n);
            for w in ranges.windows(2) {
                assert_eq!(w[0].end, w[1].start);
            }
        }
    }

    #[test]
    fn autocorr_time_of_repeated_series() {
        // each value repeated 10 times -> tau ~ 10
        let xs: Vec<f64> = lcg_series(500, 9)
            .into_iter()
            .flat_map(|v| std::iter::repeat_n(v, 10))
            .collect();
        let tau = integrated_autocorr_time(&xs);
        assert!(tau > 5.0 && tau < 16.0, "tau = {tau}");
        let tau = integrated_autocorr_time(&lcg_series(5000, 9));
        assert!(tau < 2.0, "tau = {tau}");
    }

    #[test]
    fn ks_statistic_of_exact_grid() {
        // uniform grid against the uniform CDF: D = 1/(2n) + o(1)
        let n = 1000;
        let xs: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let d = ks_statistic(&xs, |x| x.clamp(0.0, 1.0));
        assert!(d < 1.0 / n as f64, "d = {d}");
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        // n-point rule is exact for degree 2n-1
        let (xs, ws) = gauss_legendre_on(0.0, 2.0, 8);
        let integral: f64 = xs
            .iter()
            .zip(&ws)
            .map(|(x, w)| w * (x.powi(14) - 3.0 * x.powi(5) + 1.0))
            .sum();
        let exact = 2.0f64.powi(15) / 15.0 - 3.0 * 2.0f64.powi(6) / 6.0 + 2.0;
        assert!((integral - exact).abs() < 1e-9 * exact.abs(), "{integral} vs {exact}");
        // and the weights sum to the interval length
        assert!((ws.iter().sum::<f64>() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn gauss_legendre_against_gamma_moments() {
        // int_0^40 E^2 e^-E dE / int_0^40 e^-E dE = 2 to ~1e-12
        let (xs, ws) = gauss_legendre_on(0.0, 40.0, 64);
        let num: f64 = xs.iter().zip(&ws).map(|(x, w)| w * x * x * (-x).exp()).sum();
        let den: f64 = xs.iter().zip(&ws).map(|(x, w)| w * (-x).exp()).sum();
        assert!((num / den - 2.0).abs() < 1e-10);
    }
}
