//! Laplace and discrete exponential mechanisms, and the two legitimizing
//! post-processing steps (truncation by noise redraw, and BIT clamping).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DipsError, Result};
use crate::randvar::{laplace_noise, sample_categorical};

/// Redraw cap for truncation before giving up.
pub const MAX_TRUNCATION_REDRAWS: usize = 1_000_000;

/// l1 global sensitivity of a statistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct SensitivitySpec(f64);

impl SensitivitySpec {
    pub fn new(delta_s: f64) -> Result<Self> {
        if delta_s > 0.0 && delta_s.is_finite() {
            Ok(Self(delta_s))
        } else {
            Err(DipsError::ParameterDomain(format!(
                "sensitivity must be positive, got {delta_s}"
            )))
        }
    }

    pub fn delta_s(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for SensitivitySpec {
    type Error = DipsError;
    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<SensitivitySpec> for f64 {
    fn from(s: SensitivitySpec) -> f64 {
        s.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PostProcess {
    None,
    Truncate { lo: f64, hi: f64 },
    Bit { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SanitizedStatistic {
    pub label: String,
    pub raw: Vec<f64>,
    pub sanitized: Vec<f64>,
    pub eps_spent: f64,
    pub sensitivity: SensitivitySpec,
    /// Laplace scale used for each entry.
    pub noise_scale: Vec<f64>,
    pub postprocess: PostProcess,
}

impl SanitizedStatistic {
    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn len(&self) -> usize {
        self.sanitized.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sanitized.is_empty()
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(DipsError::InvalidBudget(eps))
    }
}

fn check_bounds(lo: f64, hi: f64) -> Result<()> {
    if lo < hi {
        Ok(())
    } else {
        Err(DipsError::ParameterDomain(format!(
            "need lo < hi, got [{lo}, {hi}]"
        )))
    }
}

/// Laplace scale `Δ/ε`, rounded up where needed so that `ε · scale ≥ Δ`
/// holds exactly and the float mechanism never spends more than `ε`.
pub fn laplace_scale(delta: f64, eps: f64) -> f64 {
    let s = delta / eps;
    if eps.mul_add(s, -delta) < 0.0 {
        s.next_up()
    } else {
        s
    }
}

/// `ε / k`, rounded down where needed so that `k` shares never exceed `ε`.
pub fn split_eps(eps: f64, k: usize) -> f64 {
    let kf = k as f64;
    let per = eps / kf;
    if kf.mul_add(per, -eps) > 0.0 {
        per.next_down()
    } else {
        per
    }
}

/// Conjoint sanitization: every entry gets Laplace(0, Δs/ε) noise, with Δs
/// the l1 sensitivity of the whole vector.
pub fn laplace_mechanism<R: Rng + ?Sized>(
    rng: &mut R,
    raw: &[f64],
    sens: SensitivitySpec,
    eps: f64,
) -> Result<SanitizedStatistic> {
    check_eps(eps)?;
    let scale = laplace_scale(sens.delta_s(), eps);
    let sanitized = raw.iter().map(|x| x + laplace_noise(rng, scale)).collect();
    Ok(SanitizedStatistic {
        label: String::new(),
        raw: raw.to_vec(),
        sanitized,
        eps_spent: eps,
        sensitivity: sens,
        noise_scale: vec![scale; raw.len()],
        postprocess: PostProcess::None,
    })
}

/// Individual sanitization: ε is split evenly over the entries and entry `i`
/// is perturbed on its own sensitivity `sens[i]`. The recorded sensitivity is
/// the largest entry sensitivity.
pub fn laplace_mechanism_individual<R: Rng + ?Sized>(
    rng: &mut R,
    raw: &[f64],
    sens: &[SensitivitySpec],
    eps: f64,
) -> Result<SanitizedStatistic> {
    check_eps(eps)?;
    if raw.is_empty() || sens.len() != raw.len() {
        return Err(DipsError::ParameterDomain(
            "need one sensitivity per entry and at least one entry".into(),
        ));
    }
    let per = split_eps(eps, raw.len());
    let noise_scale: Vec<f64> = sens
        .iter()
        .map(|s| laplace_scale(s.delta_s(), per))
        .collect();
    let sanitized = raw
        .iter()
        .zip(&noise_scale)
        .map(|(x, b)| x + laplace_noise(rng, *b))
        .collect();
    let worst = sens
        .iter()
        .copied()
        .fold(sens[0], |a, b| if b.0 > a.0 { b } else { a });
    Ok(SanitizedStatistic {
        label: String::new(),
        raw: raw.to_vec(),
        sanitized,
        eps_spent: eps,
        sensitivity: worst,
        noise_scale,
        postprocess: PostProcess::None,
    })
}

/// Selection probabilities exp(uε/(2Δu)), normalized by log-sum-exp.
pub fn exponential_probabilities(utilities: &[f64], delta_u: f64, eps: f64) -> Result<Vec<f64>> {
    if utilities.is_empty() {
        return Err(DipsError::ParameterDomain("empty candidate set".into()));
    }
    if !(delta_u > 0.0 && delta_u.is_finite()) {
        return Err(DipsError::ParameterDomain(format!(
            "utility sensitivity must be positive, got {delta_u}"
        )));
    }
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(DipsError::InvalidBudget(eps));
    }
    if utilities.iter().any(|u| u.is_nan()) {
        return Err(DipsError::ParameterDomain("NaN utility".into()));
    }
    let logits: Vec<f64> = utilities
        .iter()
        .map(|u| u * eps / (2.0 * delta_u))
        .collect();
    let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
    let z: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / z).collect())
}

pub fn exponential_mechanism_discrete<'a, T, R, U>(
    rng: &mut R,
    candidates: &'a [T],
    utility: U,
    delta_u: f64,
    eps: f64,
) -> Result<&'a T>
where
    R: Rng + ?Sized,
    U: Fn(&T) -> f64,
{
    let u: Vec<f64> = candidates.iter().map(utility).collect();
    let p = exponential_probabilities(&u, delta_u, eps)?;
    Ok(&candidates[sample_categorical(rng, &p)?])
}

/// Redraw the noise of every out-of-bounds entry until `raw + noise` lands
/// in `[lo, hi]`.
pub fn postprocess_truncate<R: Rng + ?Sized>(
    rng: &mut R,
    mut stat: SanitizedStatistic,
    lo: f64,
    hi: f64,
) -> Result<SanitizedStatistic> {
    check_bounds(lo, hi)?;
    for i in 0..stat.sanitized.len() {
        if (lo..=hi).contains(&stat.sanitized[i]) {
            continue;
        }
        let (x, b) = (stat.raw[i], stat.noise_scale[i]);
        let mut tries = 0;
        stat.sanitized[i] = loop {
            if tries == MAX_TRUNCATION_REDRAWS {
                return Err(DipsError::NonConvergence(format!(
                    "truncation of `{}` into [{lo}, {hi}] at scale {b}",
                    stat.label
                )));
            }
            tries += 1;
            let y = x + laplace_noise(rng, b);
            if (lo..=hi).contains(&y) {
                break y;
            }
        };
    }
    stat.postprocess = PostProcess::Truncate { lo, hi };
    Ok(stat)
}

/// Boundary inflated truncation: clamp into `[lo, hi]`.
pub fn postprocess_bit(
    mut stat: SanitizedStatistic,
    lo: f64,
    hi: f64,
) -> Result<SanitizedStatistic> {
    check_bounds(lo, hi)?;
    for v in &mut stat.sanitized {
        *v = v.clamp(lo, hi);
    }
    stat.postprocess = PostProcess::Bit { lo, hi };
    Ok(stat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gof::{chi_square_critical, chi_square_statistic, ks_critical_001, ks_statistic};
    use crate::randvar::RngStream;
    use proptest::prelude::*;

    fn unit() -> SensitivitySpec {
        SensitivitySpec::new(1.0).unwrap()
    }

    fn fixed(raw: Vec<f64>, sanitized: Vec<f64>, scale: f64) -> SanitizedStatistic {
        let n = raw.len();
        SanitizedStatistic {
            label: "t".into(),
            raw,
            sanitized,
            eps_spent: 1.0,
            sensitivity: unit(),
            noise_scale: vec![scale; n],
            postprocess: PostProcess::None,
        }
    }

    #[test]
    fn laplace_scale_and_variance() {
        let mut rng = RngStream::new(1, 0);
        let s = laplace_mechanism(&mut rng, &vec![0.0; 200_000], unit(), 0.2).unwrap();
        assert_eq!(s.noise_scale[0], 5.0);
        let n = s.len() as f64;
        let mean = s.sanitized.iter().sum::<f64>() / n;
        let var = s.sanitized.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        // sd of the sample variance for Laplace: sqrt((μ4 - σ⁴)/n), μ4 = 24 b⁴
        let se = ((24.0 * 625.0 - 2500.0) / n).sqrt();
        assert!((var - 50.0).abs() < 4.0 * se, "var {var}");
    }

    #[test]
    fn vanishing_noise() {
        let mut rng = RngStream::new(2, 0);
        let mut hits = 0;
        for _ in 0..10_000 {
            let s = laplace_mechanism(&mut rng, &[7.0], unit(), 1e6).unwrap();
            hits += ((s.sanitized[0] - 7.0).abs() < 1e-3) as usize;
        }
        assert!(hits >= 9_990);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut rng = RngStream::new(3, 0);
        assert!(laplace_mechanism(&mut rng, &[1.0], unit(), 0.0).is_err());
        assert!(laplace_mechanism(&mut rng, &[1.0], unit(), -1.0).is_err());
        assert!(SensitivitySpec::new(0.0).is_err());
        assert!(exponential_probabilities(&[], 1.0, 1.0).is_err());
        assert!(exponential_probabilities(&[f64::NAN], 1.0, 1.0).is_err());
    }

    #[test]
    fn density_ratio_on_grid() {
        for eps in [0.1, 1.0, 10.0] {
            let mut rng = RngStream::new(4, 0);
            let b = laplace_mechanism(&mut rng, &[0.0], unit(), eps)
                .unwrap()
                .noise_scale[0];
            let dens = |x: f64, mu: f64| (-(x - mu).abs() / b).exp() / (2.0 * b);
            for i in 0..=2000 {
                let x = -10.0 + 20.0 * i as f64 / 2000.0;
                let r = dens(x, 0.0) / dens(x, 1.0);
                assert!(r <= eps.exp() * (1.0 + 1e-12) && 1.0 / r <= eps.exp() * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn individual_split() {
        let mut rng = RngStream::new(5, 0);
        let sens = [unit(), SensitivitySpec::new(4.0).unwrap()];
        let s = laplace_mechanism_individual(&mut rng, &[1.0, 2.0], &sens, 1.0).unwrap();
        assert_eq!(s.noise_scale, vec![2.0, 8.0]);
        assert_eq!(s.sensitivity.delta_s(), 4.0);
    }

    #[test]
    fn exponential_two_candidates() {
        let p = exponential_probabilities(&[0.0, 1.0], 1.0, 2.0).unwrap();
        let e = std::f64::consts::E;
        assert!((p[1] - e / (1.0 + e)).abs() < 1e-15);
        assert!((p[1] - 0.7311).abs() < 1e-4);
    }

    #[test]
    fn exponential_frequencies() {
        let mut rng = RngStream::new(6, 0);
        let cands = [0.0, 1.0, 2.5, -1.0];
        let p = exponential_probabilities(&cands, 1.0, 1.3).unwrap();
        let n = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            let c = exponential_mechanism_discrete(&mut rng, &cands, |u| *u, 1.0, 1.3).unwrap();
            counts[cands.iter().position(|x| x == c).unwrap()] += 1;
        }
        for k in 0..4 {
            let f = counts[k] as f64 / n as f64;
            let se = (p[k] * (1.0 - p[k]) / n as f64).sqrt();
            assert!((f - p[k]).abs() < 3.0 * se, "cand {k}: {f} vs {}", p[k]);
        }
    }

    #[test]
    fn exponential_equal_and_zero_budget() {
        let mut rng = RngStream::new(7, 0);
        let n = 100_000;
        let hits = (0..n)
            .filter(|_| {
                *exponential_mechanism_discrete(&mut rng, &[3, 4], |_| 1.0, 1.0, 5.0).unwrap() == 4
            })
            .count();
        assert!((hits as f64 / n as f64 - 0.5).abs() < 0.01);

        let cands = [0.0, 10.0, 20.0, 30.0, 40.0];
        let mut counts = vec![0.0; 5];
        for _ in 0..n {
            let c = exponential_mechanism_discrete(&mut rng, &cands, |u| *u, 1.0, 0.0).unwrap();
            counts[(c / 10.0) as usize] += 1.0;
        }
        let (stat, df) = chi_square_statistic(&counts, &[n as f64 / 5.0; 5], 5.0);
        assert!(stat < chi_square_critical(df, 0.01));
    }

    #[test]
    fn truncate_in_bounds_is_identity() {
        let mut rng = RngStream::new(8, 0);
        let s =
            postprocess_truncate(&mut rng, fixed(vec![3.0], vec![3.0], 1.0), 0.0, 10.0).unwrap();
        assert_eq!(s.sanitized, vec![3.0]);
        let s =
            postprocess_truncate(&mut rng, fixed(vec![0.0], vec![-2.0], 1.0), 0.0, 40.0).unwrap();
        assert!((0.0..=40.0).contains(&s.sanitized[0]));
        assert_eq!(s.postprocess, PostProcess::Truncate { lo: 0.0, hi: 40.0 });
    }

    #[test]
    fn truncate_gives_up_on_pathological_scale() {
        let mut rng = RngStream::new(9, 0);
        let err = postprocess_truncate(&mut rng, fixed(vec![0.0], vec![-1.0], 1e-3), 100.0, 100.5)
            .unwrap_err();
        assert!(matches!(err, DipsError::NonConvergence(_)));
    }

    #[test]
    fn truncated_draws_follow_renormalized_density() {
        let (raw, b, lo, hi) = (1.0, 2.0, -1.0, 4.0);
        // CDF oracle: Simpson quadrature of the unnormalized density.
        let dens = |x: f64| (-(x - raw).abs() / b).exp();
        let simpson = |a: f64, c: f64| {
            let m = 400;
            let h = (c - a) / m as f64;
            let mut s = dens(a) + dens(c);
            for j in 1..m {
                s += dens(a + j as f64 * h) * if j % 2 == 1 { 4.0 } else { 2.0 };
            }
            s * h / 3.0
        };
        let z = simpson(lo, raw) + simpson(raw, hi);
        let cdf = |x: f64| {
            if x <= lo {
                0.0
            } else if x >= hi {
                1.0
            } else if x <= raw {
                simpson(lo, x) / z
            } else {
                (simpson(lo, raw) + simpson(raw, x)) / z
            }
        };
        let mut rng = RngStream::new(10, 0);
        let n = 20_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| {
                let s = fixed(vec![raw], vec![f64::INFINITY], b);
                postprocess_truncate(&mut rng, s, lo, hi).unwrap().sanitized[0]
            })
            .collect();
        assert!(ks_statistic(draws, cdf) < ks_critical_001(n));
    }

    #[test]
    fn bit_examples() {
        let s =
            postprocess_bit(fixed(vec![0.0; 3], vec![-3.0, 45.0, 12.0], 1.0), 0.0, 40.0).unwrap();
        assert_eq!(s.sanitized, vec![0.0, 40.0, 12.0]);
        assert!(postprocess_bit(fixed(vec![0.0], vec![0.0], 1.0), 1.0, 1.0).is_err());
    }

    #[test]
    fn json_round_trip() {
        let s = fixed(vec![1.0], vec![1.5], 2.0).with_label("count");
        let j = serde_json::to_string(&s).unwrap();
        assert!(j.contains("\"kind\":\"none\""));
        assert_eq!(serde_json::from_str::<SanitizedStatistic>(&j).unwrap(), s);
    }

    proptest! {
        #[test]
        fn scale_never_undershoots(delta in 1e-6f64..1e3, eps in 1e-6f64..1e4, k in 1usize..50) {
            let b = laplace_scale(delta, eps);
            prop_assert!(eps.mul_add(b, -delta) >= 0.0);
            prop_assert!(b <= (delta / eps).next_up());
            let per = split_eps(eps, k);
            prop_assert!((k as f64).mul_add(per, -eps) <= 0.0);
            prop_assert!(per >= (eps / k as f64).next_down());
        }

        #[test]
        fn bit_is_idempotent(v in prop::collection::vec(-100.0f64..100.0, 1..20), lo in -50.0f64..0.0, w in 0.1f64..60.0) {
            let once = postprocess_bit(fixed(v.clone(), v, 1.0), lo, lo + w).unwrap();
            let twice = postprocess_bit(once.clone(), lo, lo + w).unwrap();
            prop_assert_eq!(&once.sanitized, &twice.sanitized);
            prop_assert!(once.sanitized.iter().all(|x| *x >= lo && *x <= lo + w));
        }

        #[test]
        fn ratio_bound_for_any_neighbour_pair(s in -50.0f64..50.0, d in -1.0f64..1.0, x in -100.0f64..100.0, eps in 0.01f64..20.0) {
            let mut rng = RngStream::new(11, 0);
            let b = laplace_mechanism(&mut rng, &[s], unit(), eps).unwrap().noise_scale[0];
            let log_ratio = (-(x - s).abs() + (x - s - d).abs()) / b;
            prop_assert!(log_ratio <= eps * (1.0 + 1e-9) + 1e-12);
        }
    }
}
