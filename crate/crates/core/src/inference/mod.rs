//! Per-set estimators and the rules that pool them across m released sets.

mod firth;

pub use firth::{
    firth_logistic, firth_objective, fit_multinomial_logit, FirthFit, FIRTH_MAX_ITER, FIRTH_TOL,
};

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{DipsError, Result};
use crate::randvar::{normal_quantile, t_quantile};

/// One set's estimate; `within_variance` is a variance, not a standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerSetEstimate {
    pub estimate: f64,
    pub within_variance: f64,
}

impl PerSetEstimate {
    pub fn new(estimate: f64, within_variance: f64) -> Result<Self> {
        if !(within_variance >= 0.0) || !estimate.is_finite() {
            return Err(DipsError::ParameterDomain(format!(
                "need a finite estimate and nonnegative variance, got ({estimate}, {within_variance})"
            )));
        }
        Ok(Self {
            estimate,
            within_variance,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CombinedEstimate {
    pub point: f64,
    pub between_b: f64,
    pub within_w: f64,
    pub total_t: f64,
    /// `f64::INFINITY` when the reference distribution is normal.
    pub df: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub level: f64,
    pub m: usize,
    /// Set when B = 0 (or m = 1) and a normal interval was used.
    pub degenerate_between: bool,
}

impl CombinedEstimate {
    pub fn covers(&self, truth: f64) -> bool {
        self.ci_low <= truth && truth <= self.ci_high
    }

    pub fn width(&self) -> f64 {
        self.ci_high - self.ci_low
    }
}

/// Pool m per-set estimates: mean, between/within variance, `T = B/m + W`
/// and a t interval on `ν = (m-1)(1 + mW/B)^2` degrees of freedom.
pub fn combine(estimates: &[PerSetEstimate], level: f64) -> Result<CombinedEstimate> {
    if estimates.is_empty() {
        return Err(DipsError::ParameterDomain("nothing to combine".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(DipsError::ParameterDomain(format!(
            "confidence level must be in (0,1), got {level}"
        )));
    }
    let m = estimates.len();
    let mf = m as f64;
    // Averaged as offsets from the first set so identical inputs come back exactly.
    let (e0, v0) = (estimates[0].estimate, estimates[0].within_variance);
    let point = e0 + estimates.iter().map(|e| e.estimate - e0).sum::<f64>() / mf;
    let w = v0
        + estimates
            .iter()
            .map(|e| e.within_variance - v0)
            .sum::<f64>()
            / mf;
    let b = if m > 1 {
        estimates
            .iter()
            .map(|e| (e.estimate - point).powi(2))
            .sum::<f64>()
            / (mf - 1.0)
    } else {
        0.0
    };
    let upper = 1.0 - (1.0 - level) / 2.0;
    let (t, df, q, degenerate) = if b > 0.0 {
        let df = (mf - 1.0) * (1.0 + mf * w / b).powi(2);
        (b / mf + w, df, t_quantile(upper, df)?, false)
    } else {
        (w, f64::INFINITY, normal_quantile(upper)?, true)
    };
    let half = q * t.sqrt();
    Ok(CombinedEstimate {
        point,
        between_b: b,
        within_w: w,
        total_t: t,
        df,
        ci_low: point - half,
        ci_high: point + half,
        level,
        m,
        degenerate_between: degenerate,
    })
}

fn need(n: usize, min: usize) -> Result<()> {
    if n < min {
        Err(DipsError::Degenerate(format!(
            "need at least {min} rows, got {n}"
        )))
    } else {
        Ok(())
    }
}

/// Sample proportion with `v = p(1-p)/n`.
pub fn estimate_proportion(xs: &[bool]) -> Result<PerSetEstimate> {
    need(xs.len(), 3)?;
    let n = xs.len() as f64;
    let p = xs.iter().filter(|x| **x).count() as f64 / n;
    PerSetEstimate::new(p, p * (1.0 - p) / n)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_var(xs: &[f64], mean: f64) -> f64 {
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Sample mean with `v = s^2/n`.
pub fn estimate_mean(xs: &[f64]) -> Result<PerSetEstimate> {
    need(xs.len(), 3)?;
    let mu = mean(xs);
    PerSetEstimate::new(mu, sample_var(xs, mu) / xs.len() as f64)
}

/// Moment excess kurtosis `m4 / m2^2 - 3`.
pub fn excess_kurtosis(xs: &[f64]) -> Result<f64> {
    need(xs.len(), 4)?;
    let mu = mean(xs);
    let n = xs.len() as f64;
    let m2 = xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n;
    if m2 <= 0.0 {
        return Err(DipsError::Degenerate("constant column".into()));
    }
    let m4 = xs.iter().map(|x| (x - mu).powi(4)).sum::<f64>() / n;
    Ok(m4 / (m2 * m2) - 3.0)
}

/// Sample variance with `v = (s^2)^2 (2/(n-1) + κ/n)`.
pub fn estimate_variance(xs: &[f64]) -> Result<PerSetEstimate> {
    need(xs.len(), 4)?;
    let n = xs.len() as f64;
    let s2 = sample_var(xs, mean(xs));
    let kappa = excess_kurtosis(xs)?;
    // κ ≥ -2 always, so the bracket can dip below zero only for tiny n.
    PerSetEstimate::new(s2, (s2 * s2 * (2.0 / (n - 1.0) + kappa / n)).max(0.0))
}

/// Pearson correlation with `v = (1 - r^2)/(n - 2)`.
pub fn estimate_correlation(xs: &[f64], ys: &[f64]) -> Result<PerSetEstimate> {
    if xs.len() != ys.len() {
        return Err(DipsError::ParameterDomain(
            "columns differ in length".into(),
        ));
    }
    need(xs.len(), 3)?;
    let (mx, my) = (mean(xs), mean(ys));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(DipsError::Degenerate("constant column".into()));
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    PerSetEstimate::new(r, (1.0 - r * r) / (xs.len() as f64 - 2.0))
}

pub const ESTIMATE_CSV_HEADER: [&str; 6] = ["parameter", "point", "T", "df", "ci_low", "ci_high"];

pub fn write_estimates_csv<W: Write>(w: W, rows: &[(String, CombinedEstimate)]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(ESTIMATE_CSV_HEADER)?;
    for (name, e) in rows {
        out.write_record([
            name.clone(),
            e.point.to_string(),
            e.total_t.to_string(),
            e.df.to_string(),
            e.ci_low.to_string(),
            e.ci_high.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::randvar::{sample_bernoulli, sample_beta, standard_normal, RngStream};
    use proptest::prelude::*;

    fn est(pairs: &[(f64, f64)]) -> Vec<PerSetEstimate> {
        pairs
            .iter()
            .map(|(e, v)| PerSetEstimate::new(*e, *v).unwrap())
            .collect()
    }

    #[test]
    fn hand_worked_case() {
        let c = combine(&est(&[(1.0, 0.1), (2.0, 0.1), (3.0, 0.1)]), 0.95).unwrap();
        assert!((c.point - 2.0).abs() < 1e-10);
        assert!((c.between_b - 1.0).abs() < 1e-10);
        assert!((c.within_w - 0.1).abs() < 1e-10);
        assert!((c.total_t - 1.3 / 3.0).abs() < 1e-10);
        assert!((c.df - 3.38).abs() < 1e-10);
        assert!(!c.degenerate_between);
    }

    #[test]
    fn zero_between_uses_normal() {
        let c = combine(&est(&[(0.7, 0.04); 5]), 0.95).unwrap();
        assert_eq!(c.between_b, 0.0);
        assert!(c.df.is_infinite() && c.degenerate_between);
        assert!((c.total_t - 0.04).abs() < 1e-15);
        assert!((c.ci_high - 0.7 - 1.959963984540054 * 0.2).abs() < 1e-9);
    }

    #[test]
    fn single_set_is_flagged() {
        let c = combine(&est(&[(1.5, 0.25)]), 0.9).unwrap();
        assert!(c.degenerate_between && c.m == 1);
        assert_eq!(c.total_t, 0.25);
    }

    #[test]
    fn estimator_examples() {
        let xs: Vec<bool> = (0..20).map(|i| i < 10).collect();
        let p = estimate_proportion(&xs).unwrap();
        assert_eq!((p.estimate, p.within_variance), (0.5, 0.0125));

        let a: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let b: Vec<f64> = a.iter().map(|x| 3.0 * x - 1.0).collect();
        let r = estimate_correlation(&a, &b).unwrap();
        assert!((r.estimate - 1.0).abs() < 1e-12 && r.within_variance.abs() < 1e-12);

        let mut rng = RngStream::new(1, 0);
        let n = 10_000;
        let z: Vec<f64> = (0..n).map(|_| standard_normal(&mut rng)).collect();
        let v = estimate_variance(&z).unwrap();
        let ratio = v.within_variance / (2.0 / n as f64);
        assert!((ratio - 1.0).abs() < 0.15, "{ratio}");
        assert!(matches!(
            estimate_variance(&[2.0; 10]),
            Err(DipsError::Degenerate(_))
        ));
    }

    #[test]
    fn kurtosis_of_two_point_distribution() {
        // Symmetric two-point law: m4/m2^2 = 1, so κ = -2.
        let xs: Vec<f64> = (0..100)
            .map(|i| if i % 2 == 0 { -1.0 } else { 1.0 })
            .collect();
        assert!((excess_kurtosis(&xs).unwrap() + 2.0).abs() < 1e-12);
    }

    #[test]
    fn posterior_predictive_coverage() {
        // Non-private multiple synthesis for Bernoulli(0.5), n = 1000, m = 5.
        let mut rng = RngStream::new(2, 0);
        let (n, reps, m) = (1000usize, 500, 5);
        let mut hits = 0;
        for _ in 0..reps {
            let n1 = (0..n)
                .filter(|_| sample_bernoulli(&mut rng, 0.5).unwrap())
                .count() as f64;
            let sets: Vec<PerSetEstimate> = (0..m)
                .map(|_| {
                    let pi =
                        sample_beta(&mut rng, 1.0 / 3.0 + n1, 1.0 / 3.0 + n as f64 - n1).unwrap();
                    let xs: Vec<bool> = (0..n)
                        .map(|_| sample_bernoulli(&mut rng, pi).unwrap())
                        .collect();
                    estimate_proportion(&xs).unwrap()
                })
                .collect();
            hits += combine(&sets, 0.95).unwrap().covers(0.5) as usize;
        }
        let cov = hits as f64 / reps as f64;
        assert!((0.92..=0.98).contains(&cov), "coverage {cov}");
    }

    #[test]
    fn csv_rows() {
        let c = combine(&est(&[(1.0, 0.1), (2.0, 0.1), (3.0, 0.1)]), 0.95).unwrap();
        let mut buf = Vec::new();
        write_estimates_csv(&mut buf, &[("beta".into(), c)]).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("parameter,point,T,df,ci_low,ci_high\nbeta,2,"));
    }

    proptest! {
        #[test]
        fn identical_inputs_reproduce_single_set(e in -10.0f64..10.0, v in 0.001f64..5.0, m in 2usize..8) {
            let c = combine(&vec![PerSetEstimate::new(e, v).unwrap(); m], 0.95).unwrap();
            prop_assert_eq!(c.point, e);
            prop_assert_eq!(c.total_t, v);
        }

        #[test]
        fn affine_equivariance(xs in prop::collection::vec((-5.0f64..5.0, 0.01f64..2.0), 2..8), shift in -100.0f64..100.0, scale in 0.1f64..10.0) {
            let base = combine(&est(&xs), 0.95).unwrap();
            let shifted: Vec<_> = xs.iter().map(|(e, v)| (e + shift, *v)).collect();
            let s = combine(&est(&shifted), 0.95).unwrap();
            prop_assert!((s.point - base.point - shift).abs() < 1e-9);
            prop_assert!(base.df.is_infinite() && s.df.is_infinite() || (s.df - base.df).abs() <= 1e-6 * base.df);
            let scaled: Vec<_> = xs.iter().map(|(e, v)| (e * scale, v * scale * scale)).collect();
            let c = combine(&est(&scaled), 0.95).unwrap();
            prop_assert!((c.ci_low - scale * base.ci_low).abs() < 1e-8 * (1.0 + c.ci_low.abs()));
            prop_assert!((c.ci_high - scale * base.ci_high).abs() < 1e-8 * (1.0 + c.ci_high.abs()));
        }

        #[test]
        fn interval_contains_point(xs in prop::collection::vec((-5.0f64..5.0, 0.0f64..2.0), 1..8)) {
            let c = combine(&est(&xs), 0.9).unwrap();
            prop_assert!(c.ci_low <= c.point && c.point <= c.ci_high);
            prop_assert!((c.total_t - (c.between_b / c.m as f64 + c.within_w)).abs() < 1e-12 || c.m == 1);
        }
    }
}
