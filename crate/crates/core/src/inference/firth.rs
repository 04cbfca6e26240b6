//! Jeffreys-penalized (Firth) logistic and baseline-category logit fits.

#![allow(clippy::needless_range_loop)]

use nalgebra::{DMatrix, DVector};

use super::PerSetEstimate;
use crate::error::{DipsError, Result};

pub const FIRTH_MAX_ITER: usize = 100;
pub const FIRTH_TOL: f64 = 1e-6;
const MAX_STEP: f64 = 5.0;
const MAX_HALVINGS: usize = 40;

#[derive(Debug, Clone, PartialEq)]
pub struct FirthFit {
    /// For the multinomial fit: one block of `q` coefficients per
    /// non-reference level, in level order.
    pub coef: Vec<f64>,
    /// Inverse penalized information at the solution.
    pub cov: DMatrix<f64>,
    pub iterations: usize,
    /// Max-norm of the penalized score at the solution.
    pub score_max: f64,
    pub penalized_loglik: f64,
}

impl FirthFit {
    pub fn estimates(&self) -> Vec<PerSetEstimate> {
        self.coef
            .iter()
            .enumerate()
            .map(|(j, b)| PerSetEstimate {
                estimate: *b,
                within_variance: self.cov[(j, j)].max(0.0),
            })
            .collect()
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn check_design(x: &DMatrix<f64>, n_resp: usize) -> Result<()> {
    let (n, q) = x.shape();
    if n != n_resp {
        return Err(DipsError::ParameterDomain(
            "response length differs from design rows".into(),
        ));
    }
    if n <= q || q == 0 {
        return Err(DipsError::ParameterDomain(format!(
            "need n > q >= 1, got n={n}, q={q}"
        )));
    }
    // Rank after scaling columns to unit norm.
    let mut z = x.clone();
    for mut c in z.column_iter_mut() {
        let norm = c.norm();
        if norm == 0.0 {
            return Err(DipsError::RankDeficient);
        }
        c /= norm;
    }
    let sv = z.singular_values();
    let (lo, hi) = sv
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), s| (a.min(*s), b.max(*s)));
    if lo <= 1e-10 * hi {
        return Err(DipsError::RankDeficient);
    }
    Ok(())
}

struct Eval {
    score: DVector<f64>,
    inv: DMatrix<f64>,
    objective: f64,
}

/// Shared Newton driver with step-halving on the penalized objective.
fn newton<F>(p: usize, eval: F, what: &str) -> Result<FirthFit>
where
    F: Fn(&DVector<f64>) -> Result<Eval>,
{
    let mut beta = DVector::zeros(p);
    let mut cur = eval(&beta)?;
    for it in 0..FIRTH_MAX_ITER {
        let score_max = cur.score.amax();
        if score_max < FIRTH_TOL {
            return Ok(FirthFit {
                coef: beta.iter().copied().collect(),
                cov: cur.inv,
                iterations: it,
                score_max,
                penalized_loglik: cur.objective,
            });
        }
        let mut step = &cur.inv * &cur.score;
        let big = step.amax();
        if big > MAX_STEP {
            step *= MAX_STEP / big;
        }
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let trial = &beta + &step;
            if let Ok(next) = eval(&trial) {
                if next.objective >= cur.objective - 1e-12 * cur.objective.abs().max(1.0) {
                    beta = trial;
                    cur = next;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            // No ascent direction left at machine precision; accept if the
            // score is already tiny relative to the data scale.
            break;
        }
    }
    let score_max = cur.score.amax();
    if score_max < FIRTH_TOL {
        return Ok(FirthFit {
            coef: beta.iter().copied().collect(),
            cov: cur.inv,
            iterations: FIRTH_MAX_ITER,
            score_max,
            penalized_loglik: cur.objective,
        });
    }
    Err(DipsError::NonConvergence(format!(
        "{what} (score max-norm {score_max:e})"
    )))
}

fn invert_spd(m: DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let chol = m.cholesky().ok_or(DipsError::RankDeficient)?;
    let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    Ok((chol.inverse(), logdet))
}

/// Binary Firth logistic regression of `y` on the columns of `x` (include an
/// intercept column yourself).
pub fn firth_logistic(x: &DMatrix<f64>, y: &[bool]) -> Result<FirthFit> {
    check_design(x, y.len())?;
    let (n, q) = x.shape();
    let eval = |beta: &DVector<f64>| -> Result<Eval> {
        let eta = x * beta;
        let mut info = DMatrix::zeros(q, q);
        let mut loglik = 0.0;
        let mut pi = vec![0.0; n];
        let mut w = vec![0.0; n];
        for i in 0..n {
            let e = eta[i];
            pi[i] = 1.0 / (1.0 + (-e).exp());
            w[i] = pi[i] * (1.0 - pi[i]);
            loglik -= if y[i] { softplus(-e) } else { softplus(e) };
            let row = x.row(i);
            info.ger(w[i], &row.transpose(), &row.transpose(), 1.0);
        }
        let (inv, logdet) = invert_spd(info)?;
        let mut score = DVector::zeros(q);
        for i in 0..n {
            let row = x.row(i).transpose();
            let h = w[i] * (row.transpose() * &inv * &row)[(0, 0)];
            let r = (y[i] as u8 as f64) - pi[i] + h * (0.5 - pi[i]);
            score.axpy(r, &row, 1.0);
        }
        Ok(Eval {
            score,
            inv,
            objective: loglik + 0.5 * logdet,
        })
    };
    newton(q, eval, "Firth logistic")
}

/// Baseline-category logit with Firth penalty. `y[i]` is a level index in
/// `0..levels`; level 0 is the reference.
pub fn fit_multinomial_logit(x: &DMatrix<f64>, y: &[usize], levels: usize) -> Result<FirthFit> {
    check_design(x, y.len())?;
    if levels < 2 || y.iter().any(|v| *v >= levels) {
        return Err(DipsError::ParameterDomain(
            "response levels out of range".into(),
        ));
    }
    let (n, q) = x.shape();
    let j = levels - 1;
    let p = j * q;
    let eval = |beta: &DVector<f64>| -> Result<Eval> {
        let mut probs = vec![vec![0.0; j]; n];
        let mut loglik = 0.0;
        let mut info = DMatrix::zeros(p, p);
        let mut score = DVector::zeros(p);
        for i in 0..n {
            let row = x.row(i);
            let eta: Vec<f64> = (0..j)
                .map(|c| row.dot(&beta.rows(c * q, q).transpose()))
                .collect();
            let top = eta.iter().cloned().fold(0.0f64, f64::max);
            let z = (-top).exp() + eta.iter().map(|e| (e - top).exp()).sum::<f64>();
            let lse = top + z.ln();
            loglik += if y[i] == 0 { -lse } else { eta[y[i] - 1] - lse };
            for c in 0..j {
                probs[i][c] = (eta[c] - lse).exp();
            }
            let pr = &probs[i];
            for a in 0..j {
                let resid = (y[i] == a + 1) as u8 as f64 - pr[a];
                for k in 0..q {
                    score[a * q + k] += resid * row[k];
                }
                for b in 0..j {
                    let v = if a == b {
                        pr[a] * (1.0 - pr[a])
                    } else {
                        -pr[a] * pr[b]
                    };
                    for k in 0..q {
                        for l in 0..q {
                            info[(a * q + k, b * q + l)] += v * row[k] * row[l];
                        }
                    }
                }
            }
        }
        let (inv, logdet) = invert_spd(info)?;
        // Firth adjustment: ½ tr(I⁻¹ ∂I/∂β_{c,k}).
        for i in 0..n {
            let row = x.row(i);
            let pr = &probs[i];
            let mut g = vec![vec![0.0; j]; j];
            for a in 0..j {
                for b in 0..j {
                    let block = inv.view((a * q, b * q), (q, q));
                    g[a][b] = (row * block * row.transpose())[(0, 0)];
                }
            }
            for c in 0..j {
                let mut t = 0.0;
                for a in 0..j {
                    let dac = (a == c) as u8 as f64;
                    for b in 0..j {
                        let dbc = (b == c) as u8 as f64;
                        let dab = (a == b) as u8 as f64;
                        let d = dab * pr[a] * (dac - pr[c])
                            - pr[a] * pr[b] * (dac - pr[c])
                            - pr[a] * pr[b] * (dbc - pr[c]);
                        t += d * g[b][a];
                    }
                }
                for k in 0..q {
                    score[c * q + k] += 0.5 * t * row[k];
                }
            }
        }
        Ok(Eval {
            score,
            inv,
            objective: loglik + 0.5 * logdet,
        })
    };
    newton(p, eval, "Firth multinomial logit")
}

/// Jeffreys-penalized log-likelihood of a binary logistic model at `beta`.
pub fn firth_objective(x: &DMatrix<f64>, y: &[bool], beta: &[f64]) -> f64 {
    let (n, q) = x.shape();
    let b = DVector::from_column_slice(beta);
    let eta = x * b;
    let mut info = DMatrix::zeros(q, q);
    let mut ll = 0.0;
    for i in 0..n {
        let pi = 1.0 / (1.0 + (-eta[i]).exp());
        ll -= if y[i] {
            softplus(-eta[i])
        } else {
            softplus(eta[i])
        };
        let row = x.row(i).transpose();
        info.ger(pi * (1.0 - pi), &row, &row, 1.0);
    }
    ll + 0.5 * info.determinant().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::randvar::{sample_bernoulli, sample_categorical, standard_normal, RngStream};

    fn design(cols: &[Vec<f64>]) -> DMatrix<f64> {
        let n = cols[0].len();
        DMatrix::from_fn(
            n,
            cols.len() + 1,
            |i, j| if j == 0 { 1.0 } else { cols[j - 1][i] },
        )
    }

    #[test]
    fn intercept_only_closed_form() {
        let x = DMatrix::from_element(100, 1, 1.0);
        let y: Vec<bool> = (0..100).map(|i| i < 30).collect();
        let fit = firth_logistic(&x, &y).unwrap();
        let p = 1.0 / (1.0 + (-fit.coef[0]).exp());
        assert!((p - 30.5 / 101.0).abs() < 1e-6, "{p}");
        assert!((p - 0.30198).abs() < 1e-5);
        assert!(fit.score_max < FIRTH_TOL);
    }

    /// Plain Nelder-Mead on the penalized objective.
    fn nelder_mead(f: impl Fn(&[f64]) -> f64, start: &[f64], tol: f64) -> Vec<f64> {
        let d = start.len();
        let mut pts: Vec<Vec<f64>> = (0..=d)
            .map(|i| {
                let mut p = start.to_vec();
                if i > 0 {
                    p[i - 1] += 1.0;
                }
                p
            })
            .collect();
        let mut vals: Vec<f64> = pts.iter().map(|p| -f(p)).collect();
        for _ in 0..20_000 {
            let mut idx: Vec<usize> = (0..=d).collect();
            idx.sort_by(|a, b| vals[*a].total_cmp(&vals[*b]));
            pts = idx.iter().map(|i| pts[*i].clone()).collect();
            vals = idx.iter().map(|i| vals[*i]).collect();
            if (vals[d] - vals[0]).abs() < tol * 1e-3
                && pts
                    .iter()
                    .all(|p| p.iter().zip(&pts[0]).all(|(a, b)| (a - b).abs() < tol))
            {
                break;
            }
            let cen: Vec<f64> = (0..d)
                .map(|k| pts[..d].iter().map(|p| p[k]).sum::<f64>() / d as f64)
                .collect();
            let along = |t: f64| -> Vec<f64> {
                (0..d).map(|k| cen[k] + t * (pts[d][k] - cen[k])).collect()
            };
            let r = along(-1.0);
            let fr = -f(&r);
            if fr < vals[0] {
                let e = along(-2.0);
                let fe = -f(&e);
                if fe < fr {
                    pts[d] = e;
                    vals[d] = fe;
                } else {
                    pts[d] = r;
                    vals[d] = fr;
                }
            } else if fr < vals[d - 1] {
                pts[d] = r;
                vals[d] = fr;
            } else {
                let c = along(0.5);
                let fc = -f(&c);
                if fc < vals[d] {
                    pts[d] = c;
                    vals[d] = fc;
                } else {
                    for i in 1..=d {
                        pts[i] = (0..d)
                            .map(|k| pts[0][k] + 0.5 * (pts[i][k] - pts[0][k]))
                            .collect();
                        vals[i] = -f(&pts[i]);
                    }
                }
            }
        }
        pts[0].clone()
    }

    #[test]
    fn separated_data_gives_finite_estimates() {
        let xs: Vec<f64> = (0..20).map(|i| i as f64 - 9.5).collect();
        let y: Vec<bool> = xs.iter().map(|x| *x > 0.0).collect();
        let x = design(&[xs]);
        let fit = firth_logistic(&x, &y).unwrap();
        assert!(fit.coef.iter().all(|b| b.is_finite()));
        assert!(fit.score_max < FIRTH_TOL);
        let reference = nelder_mead(|b| firth_objective(&x, &y, b), &[0.0, 0.0], 1e-9);
        for (a, b) in fit.coef.iter().zip(&reference) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn penalized_score_matches_finite_differences() {
        let mut rng = RngStream::new(1, 0);
        let n = 300;
        let z1: Vec<f64> = (0..n).map(|_| standard_normal(&mut rng)).collect();
        let z2: Vec<f64> = (0..n).map(|_| standard_normal(&mut rng)).collect();
        let y: Vec<bool> = (0..n)
            .map(|i| {
                sample_bernoulli(&mut rng, 1.0 / (1.0 + (-(0.3 + z1[i] - 0.5 * z2[i])).exp()))
                    .unwrap()
            })
            .collect();
        let x = design(&[z1, z2]);
        let fit = firth_logistic(&x, &y).unwrap();
        assert!(fit.score_max < FIRTH_TOL);
        // Away from the optimum the analytic score should equal the numeric gradient.
        let at = vec![0.1, 0.5, -0.2];
        let h = 1e-5;
        let mut num = [0.0; 3];
        for k in 0..3 {
            let (mut a, mut b) = (at.clone(), at.clone());
            a[k] += h;
            b[k] -= h;
            num[k] = (firth_objective(&x, &y, &a) - firth_objective(&x, &y, &b)) / (2.0 * h);
        }
        let fit_at = {
            let eta = &x * DVector::from_column_slice(&at);
            let mut info = DMatrix::zeros(3, 3);
            for i in 0..n {
                let p = 1.0 / (1.0 + (-eta[i]).exp());
                let row = x.row(i).transpose();
                info.ger(p * (1.0 - p), &row, &row, 1.0);
            }
            let inv = info.try_inverse().unwrap();
            let mut s = DVector::zeros(3);
            for i in 0..n {
                let p = 1.0 / (1.0 + (-eta[i]).exp());
                let row = x.row(i).transpose();
                let hdiag = p * (1.0 - p) * (row.transpose() * &inv * &row)[(0, 0)];
                s.axpy(y[i] as u8 as f64 - p + hdiag * (0.5 - p), &row, 1.0);
            }
            s
        };
        for k in 0..3 {
            assert!(
                (fit_at[k] - num[k]).abs() <= 1e-4 * num[k].abs().max(1.0),
                "{k}: {} vs {}",
                fit_at[k],
                num[k]
            );
        }
    }

    #[test]
    fn null_recovery() {
        let mut rng = RngStream::new(2, 0);
        let n = 1000;
        let z: Vec<f64> = (0..n).map(|_| standard_normal(&mut rng)).collect();
        let y: Vec<bool> = (0..n)
            .map(|_| sample_bernoulli(&mut rng, 0.5).unwrap())
            .collect();
        let fit = firth_logistic(&design(&[z]), &y).unwrap();
        for e in fit.estimates() {
            assert!(e.estimate.abs() < 3.0 * e.within_variance.sqrt());
        }
    }

    #[test]
    fn rank_deficiency_detected() {
        let z: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let x = design(&[z.clone(), z.iter().map(|v| 2.0 * v).collect()]);
        let y: Vec<bool> = (0..30).map(|i| i % 3 == 0).collect();
        assert_eq!(
            firth_logistic(&x, &y).unwrap_err(),
            DipsError::RankDeficient
        );
    }

    fn three_level_data(
        seed: u64,
        n: usize,
        b1: [f64; 2],
        b2: [f64; 2],
    ) -> (DMatrix<f64>, Vec<usize>) {
        let mut rng = RngStream::new(seed, 0);
        let z: Vec<f64> = (0..n).map(|_| standard_normal(&mut rng)).collect();
        let y: Vec<usize> = z
            .iter()
            .map(|v| {
                let w = [1.0, (b1[0] + b1[1] * v).exp(), (b2[0] + b2[1] * v).exp()];
                sample_categorical(&mut rng, &w).unwrap()
            })
            .collect();
        (design(&[z]), y)
    }

    #[test]
    fn multinomial_two_levels_matches_binary_fit() {
        let (x, y) = three_level_data(3, 400, [0.2, 0.8], [-0.5, -0.4]);
        let merged: Vec<usize> = y.iter().map(|v| (*v > 0) as usize).collect();
        let multi = fit_multinomial_logit(&x, &merged, 2).unwrap();
        let bin = firth_logistic(&x, &merged.iter().map(|v| *v == 1).collect::<Vec<_>>()).unwrap();
        for (a, b) in multi.coef.iter().zip(&bin.coef) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        for k in 0..2 {
            assert!((multi.cov[(k, k)] - bin.cov[(k, k)]).abs() < 1e-8);
        }
    }

    #[test]
    fn reference_switch_identity() {
        let (x, y) = three_level_data(4, 500, [0.3, 1.0], [-0.2, -0.7]);
        let fit = fit_multinomial_logit(&x, &y, 3).unwrap();
        assert!(fit.score_max < FIRTH_TOL);
        // Make original level 1 the reference: new order (1, 0, 2).
        let relabel: Vec<usize> = y.iter().map(|v| [1, 0, 2][*v]).collect();
        let alt = fit_multinomial_logit(&x, &relabel, 3).unwrap();
        let (b1, b2) = (&fit.coef[0..2], &fit.coef[2..4]);
        for k in 0..2 {
            assert!((alt.coef[k] + b1[k]).abs() < 1e-6);
            assert!((alt.coef[2 + k] - (b2[k] - b1[k])).abs() < 1e-6);
        }
    }

    #[test]
    fn symmetric_three_levels_no_effect() {
        let (x, y) = three_level_data(5, 900, [0.0, 0.0], [0.0, 0.0]);
        let fit = fit_multinomial_logit(&x, &y, 3).unwrap();
        for e in fit.estimates() {
            assert!(e.estimate.abs() < 3.0 * e.within_variance.sqrt(), "{e:?}");
        }
    }
}
