//! Small statistics helpers shared by the benchmark and campaign code.

use statrs::distribution::{Beta, ContinuousCDF};

/// Nearest-rank percentile (`p` in `[0, 100]`) of an unsorted sample.
/// Returns `None` for an empty sample.
pub fn percentile(samples: &[f64], p: f64) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("percentile over non-NaN samples"));
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

pub fn mean(samples: &[f64]) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    Some(samples.iter().sum::<f64>() / samples.len() as f64)
}

/// Exact (Clopper–Pearson) two-sided 95% confidence interval for a binomial
/// proportion, as fractions in `[0, 1]`.
///
/// The bounds are Beta-distribution quantiles: lower = `B(α/2; k, n-k+1)`,
/// upper = `B(1-α/2; k+1, n-k)`, with the conventional closures lower = 0 at
/// `k = 0` and upper = 1 at `k = n`.
pub fn clopper_pearson95(successes: u64, trials: u64) -> (f64, f64) {
    assert!(successes <= trials, "successes exceed trials");
    assert!(trials > 0, "empty sample has no interval");
    let alpha = 0.05;
    let (k, n) = (successes as f64, trials as f64);
    let lower = if successes == 0 { 0.0 } else { beta_quantile(alpha / 2.0, k, n - k + 1.0) };
    let upper = if successes == trials {
        1.0
    } else {
        beta_quantile(1.0 - alpha / 2.0, k + 1.0, n - k)
    };
    (lower, upper)
}

/// Beta quantile by bisection on the CDF. The library's generic
/// `inverse_cdf` stops a few decimal digits short; fifty halvings of the
/// unit interval pin the result well past f64 display precision.
fn beta_quantile(p: f64, shape_a: f64, shape_b: f64) -> f64 {
    let dist = Beta::new(shape_a, shape_b).expect("valid Beta parameters");
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if dist.cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
