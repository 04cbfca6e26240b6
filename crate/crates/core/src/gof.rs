//! Goodness-of-fit statistics used to validate samplers and mechanisms.

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Two-sided Kolmogorov-Smirnov statistic of `sample` against `cdf`.
pub fn ks_statistic(mut sample: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    sample.sort_by(|a, b| a.total_cmp(b));
    let n = sample.len() as f64;
    sample
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let f = cdf(*x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic KS critical value at alpha = 0.01.
pub fn ks_critical_001(n: usize) -> f64 {
    1.627_6 / (n as f64).sqrt()
}

/// Pearson chi-square over bins, pooling adjacent bins until each has
/// expected count >= `min_expected`. Returns (statistic, degrees of freedom).
pub fn chi_square_statistic(observed: &[f64], expected: &[f64], min_expected: f64) -> (f64, usize) {
    assert_eq!(observed.len(), expected.len());
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let (mut o, mut e) = (0.0, 0.0);
    for (oi, ei) in observed.iter().zip(expected) {
        o += oi;
        e += ei;
        if e >= min_expected {
            bins.push((o, e));
            o = 0.0;
            e = 0.0;
        }
    }
    if e > 0.0 || o > 0.0 {
        match bins.last_mut() {
            Some(last) => {
                last.0 += o;
                last.1 += e;
            }
            None => bins.push((o, e)),
        }
    }
    let stat = bins.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    (stat, bins.len().saturating_sub(1).max(1))
}

pub fn chi_square_critical(df: usize, alpha: f64) -> f64 {
    ChiSquared::new(df as f64)
        .expect("positive dof")
        .inverse_cdf(1.0 - alpha)
}
