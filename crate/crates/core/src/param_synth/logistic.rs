//! Bivariate-normal covariates followed by a chain of logistic and
//! multinomial-logit outcomes, with coefficients drawn by random-walk
//! Metropolis-Hastings against a (possibly sanitized) likelihood.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::models::{assemble, continuous_bounds};
use super::{
    GroupLayout, ModipsModel, NoisyQuery, QuerySpec, SanitizedStats, StatGroup, Statistics,
};
use crate::data::{ColumnData, ColumnSpec, Schema, TabularDataset};
use crate::error::{DipsError, Result};
use crate::randvar::{
    sample_categorical, sample_inv_wishart, standard_normal, uniform_open, MvNormal, RngStream,
    SymmetricMatrix,
};

/// Per-row likelihood factors are clamped into `[FACTOR_FLOOR, FACTOR_CEIL]`
/// before multiplying, which bounds the sensitivity of the product.
pub const FACTOR_FLOOR: f64 = 1e-12;
pub const FACTOR_CEIL: f64 = 0.99;
/// Lower legitimate bound of a sanitized likelihood.
pub const LIK_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MhSettings {
    pub chains: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub iterations: usize,
    pub initial_scale: f64,
    /// Proposal scale is retuned every `adapt_every` burn-in iterations.
    pub adapt_every: usize,
}

impl Default for MhSettings {
    fn default() -> Self {
        Self {
            chains: 2,
            burn_in: 1500,
            thin: 10,
            iterations: 6500,
            initial_scale: 0.1,
            adapt_every: 50,
        }
    }
}

impl MhSettings {
    pub fn kept_per_chain(&self) -> usize {
        self.iterations
            .saturating_sub(self.burn_in)
            .div_ceil(self.thin.max(1))
    }

    fn validate(&self) -> Result<()> {
        if self.chains == 0
            || self.thin == 0
            || self.kept_per_chain() == 0
            || !(self.initial_scale > 0.0)
        {
            return Err(DipsError::Config("MH settings keep no draws".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequentialLogisticModel {
    pub covariates: Vec<String>,
    /// Categorical outcomes in modelling order; outcome t is regressed on an
    /// intercept, the covariates and dummies of outcomes before it.
    pub outcomes: Vec<String>,
    pub mh: MhSettings,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticDraw {
    pub mu: Vec<f64>,
    pub sigma: SymmetricMatrix,
    /// `betas[d][t]`: coefficients of outcome t in kept draw d, in blocks of
    /// the design width per non-reference level.
    pub betas: Vec<Vec<Vec<f64>>>,
    /// Post-burn-in acceptance rate per outcome, averaged over chains.
    pub acceptance: Vec<f64>,
}

/// Design for one outcome: row-major `n x q` plus responses.
struct Design {
    x: Vec<f64>,
    q: usize,
    y: Vec<usize>,
    levels: usize,
}

impl Design {
    fn n(&self) -> usize {
        self.y.len()
    }

    /// `(log p(y_i), clamped log p(y_i))` summed over rows.
    fn log_lik(&self, beta: &[f64]) -> (f64, f64) {
        let (q, l) = (self.q, self.levels);
        let mut eta = vec![0.0; l];
        let (mut exact, mut clamped) = (0.0, 0.0);
        for (row, &y) in self.x.chunks_exact(q).zip(&self.y) {
            if l == 2 {
                let e: f64 = row.iter().zip(beta).map(|(a, b)| a * b).sum();
                let softplus = e.max(0.0) + (-e.abs()).exp().ln_1p();
                let lp = if y == 1 { e - softplus } else { -softplus };
                exact += lp;
                clamped += lp.clamp(FACTOR_FLOOR.ln(), FACTOR_CEIL.ln());
                continue;
            }
            for k in 1..l {
                eta[k] = row
                    .iter()
                    .zip(&beta[(k - 1) * q..k * q])
                    .map(|(a, b)| a * b)
                    .sum();
            }
            let mx = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + eta.iter().map(|e| (e - mx).exp()).sum::<f64>().ln();
            let lp = eta[y] - lse;
            exact += lp;
            clamped += lp.clamp(FACTOR_FLOOR.ln(), FACTOR_CEIL.ln());
        }
        (exact, clamped)
    }
}

fn levels_of(schema: &Schema, col: &str) -> Result<usize> {
    match &schema.columns[schema.index_of(col)?] {
        ColumnSpec::Categorical { levels, .. } if levels.len() >= 2 => Ok(levels.len()),
        _ => Err(DipsError::Schema(format!(
            "outcome `{col}` must be categorical with at least two levels"
        ))),
    }
}

impl SequentialLogisticModel {
    pub fn new(covariates: Vec<String>, outcomes: Vec<String>) -> Self {
        Self {
            covariates,
            outcomes,
            mh: MhSettings::default(),
        }
    }

    /// Design width of each outcome's model.
    pub fn design_widths(&self, schema: &Schema) -> Result<Vec<usize>> {
        let mut q = 1 + self.covariates.len();
        let mut out = Vec::with_capacity(self.outcomes.len());
        for o in &self.outcomes {
            out.push(q);
            q += levels_of(schema, o)? - 1;
        }
        Ok(out)
    }

    /// Coefficient count of each outcome's model.
    pub fn parameter_counts(&self, schema: &Schema) -> Result<Vec<usize>> {
        self.outcomes
            .iter()
            .zip(self.design_widths(schema)?)
            .map(|(o, q)| Ok(q * (levels_of(schema, o)? - 1)))
            .collect()
    }

    /// Design row for outcome `t` given covariates and earlier outcomes.
    fn design_row(
        &self,
        schema: &Schema,
        t: usize,
        z: &[f64],
        w: &[u32],
        out: &mut Vec<f64>,
    ) -> Result<()> {
        out.push(1.0);
        out.extend_from_slice(z);
        for (s, o) in self.outcomes[..t].iter().enumerate() {
            for lvl in 1..levels_of(schema, o)? {
                out.push(f64::from(u8::from(w[s] as usize == lvl)));
            }
        }
        Ok(())
    }

    /// Logistic design matrix of outcome `t` for a dataset with this
    /// model's columns.
    pub fn design_matrix(&self, data: &TabularDataset, t: usize) -> Result<DMatrix<f64>> {
        let d = self.design(data, t)?;
        Ok(DMatrix::from_row_slice(d.n(), d.q, &d.x))
    }

    fn design(&self, data: &TabularDataset, t: usize) -> Result<Design> {
        let schema = data.schema();
        let z: Vec<&[f64]> = self
            .covariates
            .iter()
            .map(|c| data.continuous(c))
            .collect::<Result<_>>()?;
        let w: Vec<&[u32]> = self.outcomes[..=t]
            .iter()
            .map(|c| data.categorical(c))
            .collect::<Result<_>>()?;
        let q = self.design_widths(schema)?[t];
        let n = data.n_rows();
        let mut x = Vec::with_capacity(n * q);
        let (mut zr, mut wr) = (Vec::new(), Vec::new());
        for i in 0..n {
            zr.clear();
            wr.clear();
            zr.extend(z.iter().map(|c| c[i]));
            wr.extend(w.iter().map(|c| c[i]));
            self.design_row(schema, t, &zr, &wr, &mut x)?;
        }
        Ok(Design {
            x,
            q,
            y: w[t].iter().map(|v| *v as usize).collect(),
            levels: levels_of(schema, &self.outcomes[t])?,
        })
    }

    fn lik_label(&self, t: usize) -> String {
        format!("lik[{}]", self.outcomes[t])
    }

    fn cov_label(a: usize, b: usize) -> String {
        format!("S[{a},{b}]")
    }

    /// Random-walk MH for one outcome's coefficients. Returns kept draws and
    /// the post-burn-in acceptance rate.
    fn run_mh(
        &self,
        rng: &mut RngStream,
        design: &Design,
        query: NoisyQuery,
        dim: usize,
    ) -> (Vec<Vec<f64>>, f64) {
        let mh = self.mh;
        let target = |rng: &mut RngStream, beta: &[f64]| -> f64 {
            let (exact, clamped) = design.log_lik(beta);
            if query.is_private() {
                query.answer(rng, clamped.exp()).ln()
            } else {
                exact
            }
        };
        let mut kept = Vec::with_capacity(mh.chains * mh.kept_per_chain());
        let (mut accepted, mut proposed) = (0usize, 0usize);
        for c in 0..mh.chains {
            let mut r = rng.child(c as u64);
            let mut beta: Vec<f64> = (0..dim).map(|_| 0.1 * standard_normal(&mut r)).collect();
            let mut current = target(&mut r, &beta);
            let mut scale = mh.initial_scale;
            let mut window = 0usize;
            for it in 0..mh.iterations {
                let prop: Vec<f64> = beta
                    .iter()
                    .map(|b| b + scale * standard_normal(&mut r))
                    .collect();
                let cand = target(&mut r, &prop);
                let accept = cand >= current || uniform_open(&mut r).ln() < cand - current;
                if accept {
                    beta = prop;
                    current = cand;
                }
                if it < mh.burn_in {
                    window += usize::from(accept);
                    if (it + 1) % mh.adapt_every == 0 {
                        let rate = window as f64 / mh.adapt_every as f64;
                        if rate < 0.15 {
                            scale *= 0.7;
                        } else if rate > 0.4 {
                            scale *= 1.4;
                        }
                        scale = scale.clamp(1e-4, 10.0);
                        window = 0;
                    }
                } else {
                    proposed += 1;
                    accepted += usize::from(accept);
                    if (it - mh.burn_in).is_multiple_of(mh.thin) {
                        kept.push(beta.clone());
                    }
                }
            }
        }
        (kept, accepted as f64 / proposed.max(1) as f64)
    }
}

fn sigmoid_probs(eta: &[f64]) -> Vec<f64> {
    let mx = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    eta.iter().map(|e| (e - mx).exp()).collect()
}

impl ModipsModel for SequentialLogisticModel {
    type Draw = LogisticDraw;

    fn name(&self) -> &str {
        "sequential-logistic"
    }

    fn statistics(&self, data: &TabularDataset) -> Result<Statistics> {
        self.mh.validate()?;
        let schema = data.schema();
        let n = data.n_rows();
        if n < 2 {
            return Err(DipsError::ParameterDomain("need at least two rows".into()));
        }
        let nf = n as f64;
        let p = self.covariates.len();
        let bounds: Vec<(f64, f64)> = self
            .covariates
            .iter()
            .map(|c| continuous_bounds(schema, c))
            .collect::<Result<_>>()?;
        let widths: Vec<f64> = bounds.iter().map(|(lo, hi)| hi - lo).collect();
        let z: Vec<&[f64]> = self
            .covariates
            .iter()
            .map(|c| data.continuous(c))
            .collect::<Result<_>>()?;
        let means: Vec<f64> = z.iter().map(|c| c.iter().sum::<f64>() / nf).collect();
        let mut groups = Vec::new();
        for j in 0..p {
            groups.push(StatGroup {
                label: format!("mean[{j}]"),
                values: vec![means[j]],
                sensitivity: vec![widths[j] / nf],
                bounds: vec![bounds[j]],
                layout: GroupLayout::Conjoint,
                weight: 1,
            });
        }
        for a in 0..p {
            for b in a..p {
                let s = (0..n)
                    .map(|i| (z[a][i] - means[a]) * (z[b][i] - means[b]))
                    .sum::<f64>()
                    / nf;
                let wab = widths[a] * widths[b];
                groups.push(StatGroup {
                    label: Self::cov_label(a, b),
                    values: vec![s],
                    sensitivity: vec![wab / nf],
                    bounds: vec![if a == b {
                        (0.0, wab / 4.0)
                    } else {
                        (-wab / 4.0, wab / 4.0)
                    }],
                    layout: GroupLayout::Conjoint,
                    weight: 1,
                });
            }
        }
        let ceil = FACTOR_CEIL.powf(nf);
        let queries = (0..self.outcomes.len())
            .map(|t| QuerySpec {
                label: self.lik_label(t),
                sensitivity: ceil,
                bounds: (LIK_FLOOR.min(ceil), ceil),
                weight: 1,
            })
            .collect();
        // fail early on schema problems
        self.parameter_counts(schema)?;
        Ok(Statistics { groups, queries })
    }

    fn posterior_draw(
        &self,
        rng: &mut RngStream,
        stats: &SanitizedStats,
        data: &TabularDataset,
        flags: &mut Vec<String>,
    ) -> Result<LogisticDraw> {
        let p = self.covariates.len();
        let nf = data.n_rows() as f64;
        let mut s = DMatrix::zeros(p, p);
        for a in 0..p {
            for b in a..p {
                let v = stats.get(&Self::cov_label(a, b))?[0];
                s[(a, b)] = v;
                s[(b, a)] = v;
            }
        }
        let mut s = SymmetricMatrix::new(s * nf)?;
        if !s.is_positive_definite() {
            let floor = 1e-8 * s.matrix().diagonal().amax().max(1e-300);
            flags.push("sanitized covariance not positive definite; eigenvalues floored".into());
            s = s.with_eigen_floor(floor);
        }
        let sigma = sample_inv_wishart(rng, nf, &s)?;
        let center: Vec<f64> = (0..p)
            .map(|j| stats.get(&format!("mean[{j}]")).map(|v| v[0]))
            .collect::<Result<_>>()?;
        let mu = MvNormal::new(&center, &SymmetricMatrix::new(sigma.matrix() / nf)?)?.sample(rng);

        let dims = self.parameter_counts(data.schema())?;
        let mut per_outcome = Vec::with_capacity(self.outcomes.len());
        let mut acceptance = Vec::with_capacity(self.outcomes.len());
        for (t, dim) in dims.into_iter().enumerate() {
            let design = self.design(data, t)?;
            let query = stats.query(&self.lik_label(t))?;
            let mut r = rng.child(t as u64);
            let (kept, acc) = self.run_mh(&mut r, &design, query, dim);
            per_outcome.push(kept);
            acceptance.push(acc);
        }
        let d = per_outcome[0].len();
        let betas = (0..d)
            .map(|i| per_outcome.iter().map(|k| k[i].clone()).collect())
            .collect();
        Ok(LogisticDraw {
            mu,
            sigma,
            betas,
            acceptance,
        })
    }

    fn predictive_draw(
        &self,
        rng: &mut RngStream,
        d: &LogisticDraw,
        schema: &Schema,
        n: usize,
    ) -> Result<TabularDataset> {
        let p = self.covariates.len();
        let bounds: Vec<(f64, f64)> = self
            .covariates
            .iter()
            .map(|c| continuous_bounds(schema, c))
            .collect::<Result<_>>()?;
        let levels: Vec<usize> = self
            .outcomes
            .iter()
            .map(|o| levels_of(schema, o))
            .collect::<Result<_>>()?;
        let widths = self.design_widths(schema)?;
        let zdist = MvNormal::new(&d.mu, &d.sigma)?;
        let mut z = vec![Vec::with_capacity(n); p];
        let mut w = vec![Vec::with_capacity(n); self.outcomes.len()];
        let (mut row, mut wr) = (Vec::new(), Vec::new());
        for i in 0..n {
            let zi: Vec<f64> = zdist
                .sample(rng)
                .iter()
                .zip(&bounds)
                .map(|(v, (lo, hi))| v.clamp(*lo, *hi))
                .collect();
            let betas = &d.betas[i % d.betas.len()];
            wr.clear();
            for t in 0..self.outcomes.len() {
                row.clear();
                self.design_row(schema, t, &zi, &wr, &mut row)?;
                let q = widths[t];
                let mut eta = vec![0.0; levels[t]];
                for k in 1..levels[t] {
                    eta[k] = row
                        .iter()
                        .zip(&betas[t][(k - 1) * q..k * q])
                        .map(|(a, b)| a * b)
                        .sum();
                }
                let y = sample_categorical(rng, &sigmoid_probs(&eta))? as u32;
                wr.push(y);
            }
            for (col, v) in z.iter_mut().zip(zi) {
                col.push(v);
            }
            for (col, v) in w.iter_mut().zip(&wr) {
                col.push(*v);
            }
        }
        let pieces = self
            .covariates
            .iter()
            .cloned()
            .zip(z.into_iter().map(ColumnData::Continuous))
            .chain(
                self.outcomes
                    .iter()
                    .cloned()
                    .zip(w.into_iter().map(ColumnData::Categorical)),
            )
            .collect();
        assemble(schema, pieces)
    }
}

/// Draw a dataset from the sequential logistic generating process with
/// fixed parameters, rejecting covariate draws outside the schema bounds.
pub fn simulate_sequential_logistic<R: Rng + ?Sized>(
    rng: &mut R,
    model: &SequentialLogisticModel,
    schema: &Schema,
    mu: &[f64],
    sigma: &SymmetricMatrix,
    betas: &[Vec<f64>],
    n: usize,
) -> Result<TabularDataset> {
    let bounds: Vec<(f64, f64)> = model
        .covariates
        .iter()
        .map(|c| continuous_bounds(schema, c))
        .collect::<Result<_>>()?;
    let counts = model.parameter_counts(schema)?;
    if betas.len() != counts.len() || betas.iter().zip(&counts).any(|(b, c)| b.len() != *c) {
        return Err(DipsError::Config(
            "coefficient vectors do not match the outcome models".into(),
        ));
    }
    let zdist = MvNormal::new(mu, sigma)?;
    let mut rows = Vec::with_capacity(n);
    let mut tries = 0usize;
    while rows.len() < n {
        tries += 1;
        if tries > 1000 * n.max(1) {
            return Err(DipsError::NonConvergence(
                "covariate rejection sampling".into(),
            ));
        }
        let z = zdist.sample(rng);
        if z.iter()
            .zip(&bounds)
            .all(|(v, (lo, hi))| (lo..=hi).contains(&v))
        {
            rows.push(z);
        }
    }
    let mut z = vec![Vec::with_capacity(n); mu.len()];
    let mut w = vec![Vec::with_capacity(n); model.outcomes.len()];
    let widths = model.design_widths(schema)?;
    let levels: Vec<usize> = model
        .outcomes
        .iter()
        .map(|o| levels_of(schema, o))
        .collect::<Result<_>>()?;
    let (mut row, mut wr) = (Vec::new(), Vec::new());
    for zi in rows {
        wr.clear();
        for t in 0..model.outcomes.len() {
            row.clear();
            model.design_row(schema, t, &zi, &wr, &mut row)?;
            let q = widths[t];
            let mut eta = vec![0.0; levels[t]];
            for k in 1..levels[t] {
                eta[k] = row
                    .iter()
                    .zip(&betas[t][(k - 1) * q..k * q])
                    .map(|(a, b)| a * b)
                    .sum();
            }
            wr.push(sample_categorical(rng, &sigmoid_probs(&eta))? as u32);
        }
        for (col, v) in z.iter_mut().zip(&zi) {
            col.push(*v);
        }
        for (col, v) in w.iter_mut().zip(&wr) {
            col.push(*v);
        }
    }
    let pieces = model
        .covariates
        .iter()
        .cloned()
        .zip(z.into_iter().map(ColumnData::Continuous))
        .chain(
            model
                .outcomes
                .iter()
                .cloned()
                .zip(w.into_iter().map(ColumnData::Categorical)),
        )
        .collect();
    assemble(schema, pieces)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::budget::{PrivacyBudget, PrivacyLedger, Share};
    use crate::inference::firth_logistic;
    use crate::param_synth::{modips_release, ms_release, ModipsOptions};

    fn setup() -> (SequentialLogisticModel, Schema) {
        let schema = Schema::new(vec![
            ColumnSpec::continuous("z1", -4.0, 4.0),
            ColumnSpec::continuous("z2", -4.0, 4.0),
            ColumnSpec::categorical("w1", &["0", "1"]),
            ColumnSpec::categorical("w2", &["0", "1"]),
        ])
        .unwrap();
        let model = SequentialLogisticModel::new(
            vec!["z1".into(), "z2".into()],
            vec!["w1".into(), "w2".into()],
        );
        (model, schema)
    }

    fn simulate(n: usize, seed: u64) -> (SequentialLogisticModel, TabularDataset, Vec<Vec<f64>>) {
        let (model, schema) = setup();
        let sigma = SymmetricMatrix::from_row_slice(2, &[1.0, 0.5, 0.5, 1.0]).unwrap();
        let betas = vec![vec![-1.0, 0.5, -1.0], vec![-0.5, -1.0, 1.0, 0.8]];
        let mut rng = RngStream::new(seed, 0);
        let ds =
            simulate_sequential_logistic(&mut rng, &model, &schema, &[0.0, 0.0], &sigma, &betas, n)
                .unwrap();
        (model, ds, betas)
    }

    #[test]
    fn widths_and_counts() {
        let (model, schema) = setup();
        assert_eq!(model.design_widths(&schema).unwrap(), vec![3, 4]);
        let schema3 = Schema::new(vec![
            ColumnSpec::continuous("z1", -4.0, 4.0),
            ColumnSpec::continuous("z2", -4.0, 4.0),
            ColumnSpec::categorical("w1", &["0", "1"]),
            ColumnSpec::categorical("w2", &["0", "1"]),
            ColumnSpec::categorical("w3", &["1", "2", "3"]),
        ])
        .unwrap();
        let m3 = SequentialLogisticModel::new(
            vec!["z1".into(), "z2".into()],
            vec!["w1".into(), "w2".into(), "w3".into()],
        );
        assert_eq!(m3.parameter_counts(&schema3).unwrap(), vec![3, 4, 10]);
    }

    #[test]
    fn log_lik_matches_direct_formula() {
        let (model, ds, _) = simulate(50, 1);
        let d = model.design(&ds, 0).unwrap();
        let beta = [0.3, -0.2, 0.7];
        let z1 = ds.continuous("z1").unwrap();
        let z2 = ds.continuous("z2").unwrap();
        let w1 = ds.categorical("w1").unwrap();
        let oracle: f64 = (0..50)
            .map(|i| {
                let p = 1.0 / (1.0 + (-(0.3 - 0.2 * z1[i] + 0.7 * z2[i])).exp());
                if w1[i] == 1 {
                    p.ln()
                } else {
                    (1.0 - p).ln()
                }
            })
            .sum();
        assert!((d.log_lik(&beta).0 - oracle).abs() < 1e-10);
    }

    #[test]
    fn statistics_layout() {
        let (model, ds, _) = simulate(1000, 2);
        let st = model.statistics(&ds).unwrap();
        assert_eq!(st.groups.len() + st.queries.len(), 7);
        assert!((st.groups[0].sensitivity[0] - 8.0 / 1000.0).abs() < 1e-15);
        assert!((st.groups[2].sensitivity[0] - 64.0 / 1000.0).abs() < 1e-15);
        assert!((st.queries[0].sensitivity - 4.317124741065786e-5).abs() < 1e-12);
    }

    #[test]
    fn simulated_data_recovers_truth() {
        let (model, ds, betas) = simulate(4000, 3);
        let x = model.design_matrix(&ds, 1).unwrap();
        let y: Vec<bool> = ds
            .categorical("w2")
            .unwrap()
            .iter()
            .map(|v| *v == 1)
            .collect();
        let fit = firth_logistic(&x, &y).unwrap();
        for (b, t) in fit.coef.iter().zip(&betas[1]) {
            assert!((b - t).abs() < 0.2, "{b} vs {t}");
        }
    }

    #[test]
    fn ms_posterior_centers_on_truth() {
        let (mut model, ds, betas) = simulate(800, 4);
        model.mh = MhSettings {
            chains: 2,
            burn_in: 600,
            thin: 5,
            iterations: 2600,
            initial_scale: 0.1,
            adapt_every: 50,
        };
        let out = ms_release(&RngStream::new(5, 0), &ds, &model, 1).unwrap();
        let draw = &out.draws[0];
        assert_eq!(draw.betas.len(), 800);
        for t in 0..2 {
            let acc = draw.acceptance[t];
            assert!(acc > 0.05 && acc < 0.8, "acceptance {acc}");
            for (j, truth) in betas[t].iter().enumerate() {
                let m = draw.betas.iter().map(|b| b[t][j]).sum::<f64>() / draw.betas.len() as f64;
                assert!(
                    (m - truth).abs() < 0.35,
                    "outcome {t} coef {j}: {m} vs {truth}"
                );
            }
        }
        let set = &out.release.sets[0];
        assert_eq!(set.n_rows(), 800);
        assert_eq!(set.schema(), ds.schema());
    }

    #[test]
    fn private_release_spends_exactly() {
        let (mut model, ds, _) = simulate(200, 6);
        model.mh = MhSettings {
            chains: 1,
            burn_in: 50,
            thin: 1,
            iterations: 250,
            initial_scale: 0.1,
            adapt_every: 25,
        };
        let mut ledger = PrivacyLedger::new(PrivacyBudget::new(2.0).unwrap());
        let out = modips_release(
            &RngStream::new(7, 0),
            &ds,
            &model,
            &mut ledger,
            Share::from_integer(1),
            &ModipsOptions::new(2),
        )
        .unwrap();
        assert_eq!(ledger.exact_share_spent(), Some(Share::from_integer(1)));
        assert_eq!(ledger.entries().len(), 2 * 7);
        assert!(out.release.sets.iter().all(|s| s.n_rows() == 200));
    }
}
