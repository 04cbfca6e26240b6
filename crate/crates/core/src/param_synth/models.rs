use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{GroupLayout, ModipsModel, SanitizedStats, StatGroup, Statistics};
use crate::data::{ColumnData, ColumnSpec, Schema, TabularDataset};
use crate::error::{DipsError, Result};
use crate::hist_synth::{Axis, GridSpec};
use crate::randvar::{
    sample_beta, sample_binomial, sample_dirichlet, sample_inv_gamma, sample_inv_wishart,
    sample_multinomial, sample_normal, sample_uniform, MvNormal, RngStream, SymmetricMatrix,
};

pub(crate) fn continuous_bounds(schema: &Schema, column: &str) -> Result<(f64, f64)> {
    match &schema.columns[schema.index_of(column)?] {
        ColumnSpec::Continuous { lo, hi, .. } if lo.is_finite() && hi.is_finite() => Ok((*lo, *hi)),
        ColumnSpec::Continuous { .. } => Err(DipsError::ParameterDomain(format!(
            "column `{column}` needs finite bounds for a bounded sensitivity"
        ))),
        _ => Err(DipsError::Schema(format!(
            "column `{column}` is not continuous"
        ))),
    }
}

/// Assemble output columns in `schema` order from named pieces.
pub(crate) fn assemble(
    schema: &Schema,
    mut pieces: Vec<(String, ColumnData)>,
) -> Result<TabularDataset> {
    let mut cols = Vec::with_capacity(schema.columns.len());
    for spec in &schema.columns {
        let pos = pieces
            .iter()
            .position(|(n, _)| n == spec.name())
            .ok_or_else(|| {
                DipsError::Schema(format!(
                    "model does not synthesize column `{}`",
                    spec.name()
                ))
            })?;
        cols.push(pieces.swap_remove(pos).1);
    }
    TabularDataset::new(schema.clone(), cols)
}

/// Binary column with a Beta prior; the sanitized statistic is the count of
/// level 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BernoulliModel {
    pub column: String,
    pub prior_a: f64,
    pub prior_b: f64,
}

impl BernoulliModel {
    pub fn new(column: impl Into<String>) -> Self {
        Self {
            column: column.into(),
            prior_a: 1.0 / 3.0,
            prior_b: 1.0 / 3.0,
        }
    }
}

impl ModipsModel for BernoulliModel {
    type Draw = f64;

    fn name(&self) -> &str {
        "bernoulli"
    }

    fn statistics(&self, data: &TabularDataset) -> Result<Statistics> {
        let n = data.n_rows() as f64;
        let n1 = data
            .categorical(&self.column)?
            .iter()
            .filter(|v| **v == 1)
            .count() as f64;
        Ok(Statistics {
            groups: vec![StatGroup {
                label: "n1".into(),
                values: vec![n1],
                sensitivity: vec![1.0],
                bounds: vec![(0.0, n)],
                layout: GroupLayout::Conjoint,
                weight: 1,
            }],
            queries: vec![],
        })
    }

    fn posterior_draw(
        &self,
        rng: &mut RngStream,
        stats: &SanitizedStats,
        data: &TabularDataset,
        _flags: &mut Vec<String>,
    ) -> Result<f64> {
        let n1 = stats.get("n1")?[0];
        let n = data.n_rows() as f64;
        sample_beta(rng, self.prior_a + n1, self.prior_b + n - n1)
    }

    fn predictive_draw(
        &self,
        rng: &mut RngStream,
        p: &f64,
        schema: &Schema,
        n: usize,
    ) -> Result<TabularDataset> {
        let ones = sample_binomial(rng, n as u64, *p)? as usize;
        let mut v: Vec<u32> = (0..n).map(|i| u32::from(i < ones)).collect();
        v.shuffle(rng);
        assemble(
            schema,
            vec![(self.column.clone(), ColumnData::Categorical(v))],
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NormalSanitization {
    /// Both statistics perturbed at the summed sensitivity with the whole
    /// per-set budget.
    Conjoint,
    /// Each statistic gets its own share, in proportion `mean : variance`.
    Individual { mean: u64, variance: u64 },
}

/// Bounded normal column with the Jeffreys-type prior; sufficient
/// statistics are the sample mean and sample variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalModel {
    pub column: String,
    pub sanitization: NormalSanitization,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalDraw {
    pub mu: f64,
    pub sigma2: f64,
}

impl NormalModel {
    pub fn new(column: impl Into<String>) -> Self {
        Self {
            column: column.into(),
            sanitization: NormalSanitization::Individual {
                mean: 1,
                variance: 1,
            },
        }
    }

    pub fn conjoint(column: impl Into<String>) -> Self {
        Self {
            column: column.into(),
            sanitization: NormalSanitization::Conjoint,
        }
    }
}

impl ModipsModel for NormalModel {
    type Draw = NormalDraw;

    fn name(&self) -> &str {
        "normal"
    }

    fn statistics(&self, data: &TabularDataset) -> Result<Statistics> {
        let (c0, c1) = continuous_bounds(data.schema(), &self.column)?;
        let x = data.continuous(&self.column)?;
        let n = x.len();
        if n < 2 {
            return Err(DipsError::ParameterDomain("need at least two rows".into()));
        }
        let nf = n as f64;
        let mean = x.iter().sum::<f64>() / nf;
        let s2 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0);
        let w = c1 - c0;
        let d_mean = w / nf;
        let d_var = w * w / nf;
        let var_hi = w * w / 4.0 * nf / (nf - 1.0);
        let groups = match self.sanitization {
            NormalSanitization::Conjoint => vec![StatGroup {
                label: "mean_var".into(),
                values: vec![mean, s2],
                sensitivity: vec![d_mean, d_var],
                bounds: vec![(c0, c1), (0.0, var_hi)],
                layout: GroupLayout::Conjoint,
                weight: 1,
            }],
            NormalSanitization::Individual {
                mean: wm,
                variance: wv,
            } => vec![
                StatGroup {
                    label: "mean".into(),
                    values: vec![mean],
                    sensitivity: vec![d_mean],
                    bounds: vec![(c0, c1)],
                    layout: GroupLayout::Conjoint,
                    weight: wm,
                },
                StatGroup {
                    label: "var".into(),
                    values: vec![s2],
                    sensitivity: vec![d_var],
                    bounds: vec![(0.0, var_hi)],
                    layout: GroupLayout::Conjoint,
                    weight: wv,
                },
            ],
        };
        Ok(Statistics {
            groups,
            queries: vec![],
        })
    }

    fn posterior_draw(
        &self,
        rng: &mut RngStream,
        stats: &SanitizedStats,
        data: &TabularDataset,
        flags: &mut Vec<String>,
    ) -> Result<NormalDraw> {
        let (mean, mut s2) = match self.sanitization {
            NormalSanitization::Conjoint => {
                let v = stats.get("mean_var")?;
                (v[0], v[1])
            }
            NormalSanitization::Individual { .. } => (stats.get("mean")?[0], stats.get("var")?[0]),
        };
        if !(s2 > 0.0) {
            flags.push(format!(
                "sanitized variance {s2} replaced by the smallest positive value"
            ));
            s2 = f64::MIN_POSITIVE;
        }
        let nf = data.n_rows() as f64;
        let sigma2 = sample_inv_gamma(rng, (nf - 1.0) / 2.0, (nf - 1.0) * s2 / 2.0)?;
        let mu = sample_normal(rng, mean, (sigma2 / nf).sqrt())?;
        Ok(NormalDraw { mu, sigma2 })
    }

    fn predictive_draw(
        &self,
        rng: &mut RngStream,
        d: &NormalDraw,
        schema: &Schema,
        n: usize,
    ) -> Result<TabularDataset> {
        let (c0, c1) = continuous_bounds(schema, &self.column)?;
        let sd = d.sigma2.sqrt();
        let x = (0..n)
            .map(|_| Ok(sample_normal(rng, d.mu, sd)?.clamp(c0, c1)))
            .collect::<Result<Vec<_>>>()?;
        assemble(
            schema,
            vec![(self.column.clone(), ColumnData::Continuous(x))],
        )
    }
}

/// Cell-specific means with a common covariance: categorical cells carry
/// probabilities π, and within cell k the continuous block is N(μ_k, Σ)
/// restricted to the cell's box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixtureModel {
    pub categorical: Vec<String>,
    pub continuous: Vec<String>,
    /// `(lo, hi)` of each continuous column within each cell, cells in grid
    /// order (last categorical column fastest).
    pub cell_bounds: Vec<Vec<(f64, f64)>>,
    pub dirichlet_prior: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureDraw {
    pub pi: Vec<f64>,
    pub mu: Vec<Vec<f64>>,
    pub sigma: SymmetricMatrix,
}

impl GaussianMixtureModel {
    pub fn new(
        categorical: Vec<String>,
        continuous: Vec<String>,
        cell_bounds: Vec<Vec<(f64, f64)>>,
    ) -> Self {
        Self {
            categorical,
            continuous,
            cell_bounds,
            dirichlet_prior: 0.5,
        }
    }

    pub fn grid(&self, schema: &Schema) -> Result<GridSpec> {
        GridSpec::new(
            self.categorical
                .iter()
                .map(|c| match &schema.columns[schema.index_of(c)?] {
                    ColumnSpec::Categorical { name, levels } => Ok(Axis::Categorical {
                        name: name.clone(),
                        levels: levels.clone(),
                    }),
                    _ => Err(DipsError::Schema(format!(
                        "column `{c}` is not categorical"
                    ))),
                })
                .collect::<Result<_>>()?,
        )
    }

    /// Cell index of every row.
    pub fn cells(&self, data: &TabularDataset) -> Result<(GridSpec, Vec<usize>)> {
        let grid = self.grid(data.schema())?;
        let cols: Vec<&[u32]> = self
            .categorical
            .iter()
            .map(|c| data.categorical(c))
            .collect::<Result<_>>()?;
        let cells = (0..data.n_rows())
            .map(|r| {
                cols.iter()
                    .zip(grid.axes())
                    .fold(0, |acc, (c, a)| acc * a.size() + c[r] as usize)
            })
            .collect();
        Ok((grid, cells))
    }

    fn widths(&self) -> Vec<f64> {
        (0..self.continuous.len())
            .map(|j| {
                self.cell_bounds
                    .iter()
                    .map(|b| b[j].1 - b[j].0)
                    .fold(0.0, f64::max)
            })
            .collect()
    }

    fn check(&self, n_cells: usize) -> Result<()> {
        if self.cell_bounds.len() != n_cells
            || self
                .cell_bounds
                .iter()
                .any(|b| b.len() != self.continuous.len() || b.iter().any(|(l, h)| !(l < h)))
        {
            return Err(DipsError::Config(
                "cell_bounds must give lo < hi for every continuous column of every cell".into(),
            ));
        }
        if self.continuous.is_empty() {
            return Err(DipsError::Config(
                "need at least one continuous column".into(),
            ));
        }
        Ok(())
    }

    fn cov_label(a: usize, b: usize) -> String {
        format!("S[{a},{b}]")
    }
}

impl ModipsModel for GaussianMixtureModel {
    type Draw = MixtureDraw;

    fn name(&self) -> &str {
        "gaussian-mixture"
    }

    fn statistics(&self, data: &TabularDataset) -> Result<Statistics> {
        let (grid, cells) = self.cells(data)?;
        let k = grid.n_cells();
        self.check(k)?;
        let p = self.continuous.len();
        let n = data.n_rows();
        if n <= k + p {
            return Err(DipsError::ParameterDomain(format!(
                "n = {n} too small for {k} cells"
            )));
        }
        let nf = n as f64;
        let z: Vec<&[f64]> = self
            .continuous
            .iter()
            .map(|c| data.continuous(c))
            .collect::<Result<_>>()?;
        let mut counts = vec![0usize; k];
        let mut sums = vec![vec![0.0; p]; k];
        for (r, &c) in cells.iter().enumerate() {
            counts[c] += 1;
            for j in 0..p {
                sums[c][j] += z[j][r];
            }
        }
        let means: Vec<Vec<f64>> = sums
            .iter()
            .zip(&counts)
            .map(|(s, c)| {
                s.iter()
                    .map(|v| if *c > 0 { v / *c as f64 } else { f64::NAN })
                    .collect()
            })
            .collect();
        let mut scatter = vec![vec![0.0; p]; p];
        for (r, &c) in cells.iter().enumerate() {
            for a in 0..p {
                for b in a..p {
                    scatter[a][b] += (z[a][r] - means[c][a]) * (z[b][r] - means[c][b]);
                }
            }
        }
        let widths = self.widths();
        let mut groups = vec![StatGroup {
            label: "n".into(),
            values: counts.iter().map(|c| *c as f64).collect(),
            sensitivity: vec![1.0; k],
            bounds: vec![(0.0, nf); k],
            layout: GroupLayout::Disjoint,
            weight: 1,
        }];
        for j in 0..p {
            groups.push(StatGroup {
                label: format!("mean[{j}]"),
                values: means.iter().map(|m| m[j]).collect(),
                sensitivity: (0..k)
                    .map(|c| {
                        if counts[c] > 0 {
                            (self.cell_bounds[c][j].1 - self.cell_bounds[c][j].0) / counts[c] as f64
                        } else {
                            0.0
                        }
                    })
                    .collect(),
                bounds: self.cell_bounds.iter().map(|b| b[j]).collect(),
                layout: GroupLayout::Disjoint,
                weight: 1,
            });
        }
        let dscale = (nf - 1.0) / (nf * (nf - k as f64));
        for a in 0..p {
            for b in a..p {
                let wab = widths[a] * widths[b];
                groups.push(StatGroup {
                    label: Self::cov_label(a, b),
                    values: vec![scatter[a][b] / nf],
                    sensitivity: vec![wab * dscale],
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
        Ok(Statistics {
            groups,
            queries: vec![],
        })
    }

    fn posterior_draw(
        &self,
        rng: &mut RngStream,
        stats: &SanitizedStats,
        data: &TabularDataset,
        flags: &mut Vec<String>,
    ) -> Result<MixtureDraw> {
        let p = self.continuous.len();
        let counts = stats.get("n")?;
        let k = counts.len();
        let nf = data.n_rows() as f64;
        let alpha: Vec<f64> = counts
            .iter()
            .map(|c| self.dirichlet_prior + c.max(0.0))
            .collect();
        let pi = sample_dirichlet(rng, &alpha)?;

        let mut s = nalgebra::DMatrix::zeros(p, p);
        for a in 0..p {
            for b in a..p {
                let v = stats.get(&Self::cov_label(a, b))?[0];
                s[(a, b)] = v;
                s[(b, a)] = v;
            }
        }
        let mut s = SymmetricMatrix::new(s * nf)?;
        if !s.is_positive_definite() {
            let floor = 1e-8 * self.widths().iter().map(|w| w * w).fold(0.0, f64::max) * nf;
            flags.push("sanitized covariance not positive definite; eigenvalues floored".into());
            s = s.with_eigen_floor(floor);
        }
        let sigma = sample_inv_wishart(rng, nf - k as f64, &s)?;

        let means: Vec<&[f64]> = (0..p)
            .map(|j| stats.get(&format!("mean[{j}]")))
            .collect::<Result<_>>()?;
        let mut mu = Vec::with_capacity(k);
        for c in 0..k {
            let center: Vec<f64> = means.iter().map(|m| m[c]).collect();
            if center.iter().any(|v| v.is_nan()) {
                flags.push(format!(
                    "cell {c} is empty; mean drawn uniformly over the cell"
                ));
                mu.push(
                    self.cell_bounds[c]
                        .iter()
                        .map(|(lo, hi)| sample_uniform(rng, *lo, *hi))
                        .collect(),
                );
                continue;
            }
            let nk = counts[c].max(1.0);
            let cov = SymmetricMatrix::new(sigma.matrix() / nk)?;
            mu.push(MvNormal::new(&center, &cov)?.sample(rng));
        }
        Ok(MixtureDraw { pi, mu, sigma })
    }

    fn predictive_draw(
        &self,
        rng: &mut RngStream,
        d: &MixtureDraw,
        schema: &Schema,
        n: usize,
    ) -> Result<TabularDataset> {
        let grid = self.grid(schema)?;
        let p = self.continuous.len();
        let rows = sample_multinomial(rng, n as u64, &d.pi)?;
        let mut order: Vec<usize> = rows
            .iter()
            .enumerate()
            .flat_map(|(k, c)| std::iter::repeat_n(k, *c as usize))
            .collect();
        order.shuffle(rng);
        let zero = vec![0.0; p];
        let noise = MvNormal::new(&zero, &d.sigma)?;
        let mut cat = vec![Vec::with_capacity(n); self.categorical.len()];
        let mut cont = vec![Vec::with_capacity(n); p];
        for k in order {
            for (col, c) in cat.iter_mut().zip(grid.coords(k)) {
                col.push(c as u32);
            }
            let e = noise.sample(rng);
            for j in 0..p {
                let (lo, hi) = self.cell_bounds[k][j];
                cont[j].push((d.mu[k][j] + e[j]).clamp(lo, hi));
            }
        }
        let pieces = self
            .categorical
            .iter()
            .cloned()
            .zip(cat.into_iter().map(ColumnData::Categorical))
            .chain(
                self.continuous
                    .iter()
                    .cloned()
                    .zip(cont.into_iter().map(ColumnData::Continuous)),
            )
            .collect();
        assemble(schema, pieces)
    }
}
