//! Non-parametric synthesis: Laplace-sanitized cross-tabulations, perturbed
//! and smoothed histograms, and sampling synthetic rows back out of them.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::budget::{Composition, PrivacyLedger, Share};
use crate::data::{ColumnData, ColumnSpec, Schema, TabularDataset};
use crate::error::{DipsError, Result};
use crate::mechanisms::laplace_scale;
use crate::param_synth::SyntheticRelease;
use crate::randvar::{laplace_noise, sample_multinomial, uniform_open, RngStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Axis {
    Categorical {
        name: String,
        levels: Vec<String>,
    },
    /// `bins` equal-width bins spanning `[lo, hi]`.
    Binned {
        name: String,
        lo: f64,
        hi: f64,
        bins: usize,
    },
}

impl Axis {
    pub fn name(&self) -> &str {
        match self {
            Axis::Categorical { name, .. } | Axis::Binned { name, .. } => name,
        }
    }

    pub fn size(&self) -> usize {
        match self {
            Axis::Categorical { levels, .. } => levels.len(),
            Axis::Binned { bins, .. } => *bins,
        }
    }

    /// Width of one slot; categorical levels count as unit width.
    pub fn slot_width(&self) -> f64 {
        match self {
            Axis::Categorical { .. } => 1.0,
            Axis::Binned { lo, hi, bins, .. } => (hi - lo) / *bins as f64,
        }
    }

    pub fn bin_of(&self, x: f64) -> Result<usize> {
        match self {
            Axis::Binned { name, lo, hi, bins } => {
                if !(x >= *lo && x <= *hi) {
                    return Err(DipsError::OutOfDomain {
                        axis: name.clone(),
                        value: x.to_string(),
                    });
                }
                let k = ((x - lo) / (hi - lo) * *bins as f64).floor() as usize;
                Ok(k.min(bins - 1))
            }
            Axis::Categorical { name, .. } => {
                Err(DipsError::Schema(format!("axis `{name}` is categorical")))
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Axis::Categorical { name, levels } if levels.is_empty() => {
                Err(DipsError::Schema(format!("axis `{name}` has no levels")))
            }
            Axis::Binned { name, lo, hi, bins } => {
                if !(lo.is_finite() && hi.is_finite()) {
                    Err(DipsError::ParameterDomain(format!(
                        "axis `{name}` must be bounded"
                    )))
                } else if !(lo < hi) || *bins == 0 {
                    Err(DipsError::Schema(format!(
                        "axis `{name}` needs lo < hi and at least one bin"
                    )))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

/// Product grid over axes; cells are indexed row-major with the last axis
/// varying fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    axes: Vec<Axis>,
}

impl GridSpec {
    pub fn new(axes: Vec<Axis>) -> Result<Self> {
        if axes.is_empty() {
            return Err(DipsError::Schema("grid needs at least one axis".into()));
        }
        for a in &axes {
            a.validate()?;
        }
        Ok(Self { axes })
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn n_cells(&self) -> usize {
        self.axes.iter().map(Axis::size).product()
    }

    pub fn cell_index(&self, coords: &[usize]) -> usize {
        debug_assert_eq!(coords.len(), self.axes.len());
        coords
            .iter()
            .zip(&self.axes)
            .fold(0, |acc, (c, a)| acc * a.size() + c)
    }

    pub fn coords(&self, mut cell: usize) -> Vec<usize> {
        let mut out = vec![0; self.axes.len()];
        for (slot, a) in out.iter_mut().zip(&self.axes).rev() {
            *slot = cell % a.size();
            cell /= a.size();
        }
        out
    }

    /// Every cell has the same volume since bins are equal-width.
    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(Axis::slot_width).product()
    }

    pub fn total_volume(&self) -> f64 {
        self.cell_volume() * self.n_cells() as f64
    }

    /// Output schema for rows sampled from this grid.
    pub fn schema(&self) -> Result<Schema> {
        Schema::new(
            self.axes
                .iter()
                .map(|a| match a {
                    Axis::Categorical { name, levels } => ColumnSpec::Categorical {
                        name: name.clone(),
                        levels: levels.clone(),
                    },
                    Axis::Binned { name, lo, hi, .. } => ColumnSpec::Continuous {
                        name: name.clone(),
                        lo: *lo,
                        hi: *hi,
                    },
                })
                .collect(),
        )
    }
}

pub fn bin_width_scott(sample_sd: f64, n: usize) -> Result<f64> {
    bin_width_scott_dim(sample_sd, n, 1)
}

/// Scott's normal-reference width for a `d`-dimensional histogram,
/// `3.5 S n^{-1/(2+d)}`; equals the usual rule for `d = 1`.
pub fn bin_width_scott_dim(sample_sd: f64, n: usize, d: usize) -> Result<f64> {
    if !(sample_sd > 0.0 && sample_sd.is_finite()) {
        return Err(DipsError::ParameterDomain(format!(
            "sample sd must be positive, got {sample_sd}"
        )));
    }
    if n < 2 || d == 0 {
        return Err(DipsError::ParameterDomain(format!(
            "need n >= 2 and d >= 1, got n={n}, d={d}"
        )));
    }
    Ok(3.5 * sample_sd * (n as f64).powf(-1.0 / (2 + d) as f64))
}

pub fn bin_count_sturges(n: usize) -> Result<usize> {
    if n < 1 {
        return Err(DipsError::ParameterDomain("n must be positive".into()));
    }
    Ok((n as f64).log2().ceil() as usize + 1)
}

pub fn bin_width_freedman_diaconis(iqr: f64, n: usize) -> Result<f64> {
    if !(iqr > 0.0 && iqr.is_finite()) || n < 2 {
        return Err(DipsError::ParameterDomain(format!(
            "need iqr > 0 and n >= 2, got {iqr}, {n}"
        )));
    }
    Ok(2.0 * iqr * (n as f64).powf(-1.0 / 3.0))
}

/// Bins of width at most `width` needed to cover `[lo, hi]`.
pub fn bin_count(lo: f64, hi: f64, width: f64) -> usize {
    ((hi - lo) / width).ceil().max(1.0) as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinRule {
    Scott,
    Sturges,
    FreedmanDiaconis,
}

fn sample_sd(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (i, f) = (pos.floor() as usize, pos.fract());
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - f) + sorted[i + 1] * f
    } else {
        sorted[i]
    }
}

/// Number of bins over `[lo, hi]` for the values `xs` of one dimension of a
/// `d`-dimensional histogram. Degenerate samples get one bin.
pub fn choose_bins(xs: &[f64], lo: f64, hi: f64, rule: BinRule, d: usize) -> usize {
    if xs.len() < 2 {
        return 1;
    }
    let width = match rule {
        BinRule::Scott => bin_width_scott_dim(sample_sd(xs), xs.len(), d),
        BinRule::Sturges => return bin_count_sturges(xs.len()).unwrap_or(1),
        BinRule::FreedmanDiaconis => {
            let mut s = xs.to_vec();
            s.sort_by(f64::total_cmp);
            bin_width_freedman_diaconis(
                quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25),
                xs.len(),
            )
        }
    };
    width.map_or(1, |w| bin_count(lo, hi, w))
}

/// Grid over the named columns: categorical columns keep their levels,
/// continuous columns are binned over their declared bounds.
pub fn grid_for(ds: &TabularDataset, columns: &[&str], rule: BinRule) -> Result<GridSpec> {
    let d = columns
        .iter()
        .filter(|c| matches!(ds.column(c), Ok(ColumnData::Continuous(_))))
        .count();
    let mut axes = Vec::with_capacity(columns.len());
    for name in columns {
        let spec = &ds.schema().columns[ds.schema().index_of(name)?];
        axes.push(match spec {
            ColumnSpec::Categorical { name, levels } => Axis::Categorical {
                name: name.clone(),
                levels: levels.clone(),
            },
            ColumnSpec::Continuous { name, lo, hi } => Axis::Binned {
                name: name.clone(),
                lo: *lo,
                hi: *hi,
                bins: choose_bins(ds.continuous(name)?, *lo, *hi, rule, d),
            },
        });
    }
    GridSpec::new(axes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub grid: GridSpec,
    pub counts: Vec<f64>,
    pub n: f64,
}

impl Histogram {
    pub fn proportions(&self) -> Result<Vec<f64>> {
        let total: f64 = self.counts.iter().sum();
        if total <= 0.0 {
            return Err(DipsError::AllCellsZero);
        }
        Ok(self.counts.iter().map(|c| c / total).collect())
    }

    pub fn to_density(&self) -> Result<GridDensity> {
        GridDensity::new(self.grid.clone(), self.proportions()?)
    }

    /// Histogram density estimate on each cell, `p_k / volume_k`.
    pub fn density_values(&self) -> Result<Vec<f64>> {
        let v = self.grid.cell_volume();
        Ok(self.proportions()?.into_iter().map(|p| p / v).collect())
    }
}

/// Piecewise-constant density given by cell probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDensity {
    pub grid: GridSpec,
    pub probs: Vec<f64>,
}

impl GridDensity {
    pub fn new(grid: GridSpec, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != grid.n_cells() {
            return Err(DipsError::ParameterDomain(
                "one probability per cell required".into(),
            ));
        }
        if probs.iter().any(|p| !(*p >= 0.0)) {
            return Err(DipsError::ParameterDomain(
                "cell probabilities must be nonnegative".into(),
            ));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(DipsError::ParameterDomain(format!(
                "cell probabilities sum to {total}"
            )));
        }
        Ok(Self { grid, probs })
    }

    pub fn cell_density(&self, cell: usize) -> f64 {
        self.probs[cell] / self.grid.cell_volume()
    }
}

fn coords_of_row(grid: &GridSpec, cols: &[&ColumnData], row: usize) -> Result<usize> {
    let mut idx = 0;
    for (axis, col) in grid.axes().iter().zip(cols) {
        let c = match (axis, col) {
            (Axis::Categorical { .. }, ColumnData::Categorical(v)) => v[row] as usize,
            (Axis::Binned { .. }, ColumnData::Continuous(v)) => axis.bin_of(v[row])?,
            _ => {
                return Err(DipsError::Schema(format!(
                    "axis `{}` does not match the kind of its column",
                    axis.name()
                )))
            }
        };
        idx = idx * axis.size() + c;
    }
    Ok(idx)
}

fn axis_columns<'a>(ds: &'a TabularDataset, grid: &GridSpec) -> Result<Vec<&'a ColumnData>> {
    grid.axes()
        .iter()
        .map(|a| {
            let col = ds.column(a.name())?;
            if let (
                Axis::Categorical { levels, name },
                ColumnSpec::Categorical { levels: have, .. },
            ) = (a, &ds.schema().columns[ds.schema().index_of(a.name())?])
            {
                if levels != have {
                    return Err(DipsError::Schema(format!(
                        "axis `{name}` levels differ from its column"
                    )));
                }
            }
            Ok(col)
        })
        .collect()
}

/// Tally rows of `ds` into the cells of `grid`. Axes are matched to columns
/// by name.
pub fn build_histogram(ds: &TabularDataset, grid: &GridSpec) -> Result<Histogram> {
    build_histogram_rows(ds, grid, 0..ds.n_rows())
}

/// As [`build_histogram`] restricted to the given rows.
pub fn build_histogram_rows(
    ds: &TabularDataset,
    grid: &GridSpec,
    rows: impl IntoIterator<Item = usize>,
) -> Result<Histogram> {
    let cols = axis_columns(ds, grid)?;
    let mut counts = vec![0.0; grid.n_cells()];
    let mut n = 0.0;
    for r in rows {
        counts[coords_of_row(grid, &cols, r)?] += 1.0;
        n += 1.0;
    }
    Ok(Histogram {
        grid: grid.clone(),
        counts,
        n,
    })
}

/// Per-cell Laplace(1/ε) noise with BIT at zero. Cells are disjoint, so the
/// whole histogram costs ε.
pub fn perturb_histogram<R: Rng + ?Sized>(
    rng: &mut R,
    hist: &Histogram,
    eps: f64,
) -> Result<Histogram> {
    perturb_counts(rng, hist, eps, 1.0)
}

/// As [`perturb_histogram`] with an explicit count sensitivity.
pub fn perturb_counts<R: Rng + ?Sized>(
    rng: &mut R,
    hist: &Histogram,
    eps: f64,
    delta: f64,
) -> Result<Histogram> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(DipsError::InvalidBudget(eps));
    }
    let scale = laplace_scale(delta, eps);
    let counts: Vec<f64> = hist
        .counts
        .iter()
        .map(|c| (c + laplace_noise(rng, scale)).max(0.0))
        .collect();
    let n: f64 = counts.iter().sum();
    if n <= 0.0 {
        return Err(DipsError::AllCellsZero);
    }
    Ok(Histogram {
        grid: hist.grid.clone(),
        counts,
        n,
    })
}

/// Record a histogram release: one parallel charge per cell.
pub fn charge_histogram(
    ledger: &mut PrivacyLedger,
    group: &str,
    share: Share,
    cells: usize,
) -> Result<()> {
    for k in 0..cells {
        ledger.charge_share(format!("{group}[{k}]"), share, Composition::parallel(group))?;
    }
    Ok(())
}

/// Smallest mixing weight that makes the smoothed histogram ε-DP:
/// `K / (K + n (e^{ε/n} - 1))`.
pub fn smooth_lambda(k: usize, n: usize, eps: f64) -> Result<f64> {
    if !(eps > 0.0) || eps.is_nan() {
        return Err(DipsError::InvalidBudget(eps));
    }
    if k == 0 || n == 0 {
        return Err(DipsError::ParameterDomain("need K >= 1 and n >= 1".into()));
    }
    let (k, n) = (k as f64, n as f64);
    Ok(k / (k + n * (eps / n).exp_m1()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothedHistogram {
    pub density: GridDensity,
    pub lambda: f64,
}

/// `(1 - λ) f̂_K + λ Ω` with `Ω` uniform over the grid's bounding box.
pub fn smooth_histogram(hist: &Histogram, eps: f64) -> Result<SmoothedHistogram> {
    for a in hist.grid.axes() {
        a.validate()?;
    }
    let n = hist.counts.iter().sum::<f64>().round() as usize;
    let k = hist.grid.n_cells();
    let lambda = smooth_lambda(k, n.max(1), eps)?;
    let p = hist.proportions()?;
    let uniform = 1.0 / k as f64;
    let probs = p
        .iter()
        .map(|p| (1.0 - lambda) * p + lambda * uniform)
        .collect();
    Ok(SmoothedHistogram {
        density: GridDensity::new(hist.grid.clone(), probs)?,
        lambda,
    })
}

/// Draw `n_out` rows: pick cells by probability, emit the level for
/// categorical axes and a uniform point inside the bin for binned axes.
pub fn sample_from_histogram<R: Rng + ?Sized>(
    rng: &mut R,
    density: &GridDensity,
    n_out: usize,
) -> Result<TabularDataset> {
    let counts = sample_multinomial(rng, n_out as u64, &density.probs)?;
    let mut cells: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(k, c)| std::iter::repeat_n(k, *c as usize))
        .collect();
    cells.shuffle(rng);
    rows_from_cells(rng, &density.grid, &cells)
}

fn rows_from_cells<R: Rng + ?Sized>(
    rng: &mut R,
    grid: &GridSpec,
    cells: &[usize],
) -> Result<TabularDataset> {
    let mut cols: Vec<ColumnData> = grid
        .axes()
        .iter()
        .map(|a| match a {
            Axis::Categorical { .. } => ColumnData::Categorical(Vec::with_capacity(cells.len())),
            Axis::Binned { .. } => ColumnData::Continuous(Vec::with_capacity(cells.len())),
        })
        .collect();
    for &cell in cells {
        for ((axis, col), c) in grid
            .axes()
            .iter()
            .zip(cols.iter_mut())
            .zip(grid.coords(cell))
        {
            match (axis, col) {
                (Axis::Categorical { .. }, ColumnData::Categorical(v)) => v.push(c as u32),
                (Axis::Binned { lo, hi, bins, .. }, ColumnData::Continuous(v)) => {
                    let w = (hi - lo) / *bins as f64;
                    let x = lo + w * (c as f64 + uniform_open(rng));
                    v.push(x.clamp(*lo, *hi));
                }
                _ => unreachable!(),
            }
        }
    }
    TabularDataset::new(grid.schema()?, cols)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrosstabRelease {
    pub sanitized: Histogram,
    pub synthetic: TabularDataset,
}

/// Perturb the full cross-tabulation of the categorical `axes` with
/// Laplace(Δ/ε), Δ = 1, BIT at zero, then draw `n_out` rows multinomially.
pub fn laplace_sanitizer_crosstab<R: Rng + ?Sized>(
    rng: &mut R,
    data: &TabularDataset,
    axes: &[&str],
    eps: f64,
    n_out: usize,
) -> Result<CrosstabRelease> {
    let mut grid_axes = Vec::with_capacity(axes.len());
    for name in axes {
        match &data.schema().columns[data.schema().index_of(name)?] {
            ColumnSpec::Categorical { name, levels } => grid_axes.push(Axis::Categorical {
                name: name.clone(),
                levels: levels.clone(),
            }),
            _ => {
                return Err(DipsError::Schema(format!(
                    "column `{name}` is not categorical"
                )))
            }
        }
    }
    let grid = GridSpec::new(grid_axes)?;
    let raw = build_histogram(data, &grid)?;
    let sanitized = perturb_histogram(rng, &raw, eps)?;
    let synthetic = sample_from_histogram(rng, &sanitized.to_density()?, n_out)?;
    Ok(CrosstabRelease {
        sanitized,
        synthetic,
    })
}

/// Binary special case: sanitize `n1` with Laplace(1/ε), clamp into `[0, n]`
/// and release a set with `round(n1*)` ones. Returns `(n1*, ones)`.
pub fn laplace_sanitizer_binary<R: Rng + ?Sized>(
    rng: &mut R,
    n1: u64,
    n: u64,
    eps: f64,
) -> Result<(f64, u64)> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(DipsError::InvalidBudget(eps));
    }
    if n1 > n || n == 0 {
        return Err(DipsError::ParameterDomain(format!(
            "need 0 <= n1 <= n, n > 0; got {n1}, {n}"
        )));
    }
    let s = (n1 as f64 + laplace_noise(rng, laplace_scale(1.0, eps))).clamp(0.0, n as f64);
    Ok((s, s.round() as u64))
}

/// Mixed-data synthesizer: a Laplace-sanitized cross-tab of the categorical
/// columns, and within each categorical cell a perturbed histogram of the
/// continuous columns over that cell's own bounds.
#[derive(Debug, Clone)]
pub struct MixedHistogramSynthesizer<'a> {
    pub categorical: Vec<&'a str>,
    pub continuous: Vec<&'a str>,
    /// Bounds `(lo, hi)` of each continuous column within each categorical cell.
    pub cell_bounds: Vec<Vec<(f64, f64)>>,
    pub rule: BinRule,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixedRelease {
    pub cell_counts: Histogram,
    pub cell_histograms: Vec<Histogram>,
    /// Synthetic rows per categorical cell.
    pub cell_rows: Vec<u64>,
    pub synthetic: TabularDataset,
}

impl MixedRelease {
    pub fn empty_cells(&self) -> usize {
        self.cell_rows.iter().filter(|c| **c == 0).count()
    }
}

impl<'a> MixedHistogramSynthesizer<'a> {
    /// One synthetic set of `n_out` rows. `eps_cells` sanitizes the cell
    /// counts; `eps_hist` sanitizes every within-cell histogram (disjoint
    /// data, so parallel).
    pub fn release<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        data: &TabularDataset,
        eps_cells: f64,
        eps_hist: f64,
        n_out: usize,
    ) -> Result<MixedRelease> {
        let cat_grid = GridSpec::new(
            self.categorical
                .iter()
                .map(
                    |name| match &data.schema().columns[data.schema().index_of(name)?] {
                        ColumnSpec::Categorical { name, levels } => Ok(Axis::Categorical {
                            name: name.clone(),
                            levels: levels.clone(),
                        }),
                        _ => Err(DipsError::Schema(format!(
                            "column `{name}` is not categorical"
                        ))),
                    },
                )
                .collect::<Result<_>>()?,
        )?;
        let n_cells = cat_grid.n_cells();
        if self.cell_bounds.len() != n_cells
            || self
                .cell_bounds
                .iter()
                .any(|b| b.len() != self.continuous.len())
        {
            return Err(DipsError::Config(
                "cell_bounds must give every continuous column for every cell".into(),
            ));
        }
        let cols = axis_columns(data, &cat_grid)?;
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_cells];
        for r in 0..data.n_rows() {
            members[coords_of_row(&cat_grid, &cols, r)?].push(r);
        }
        let raw_counts = Histogram {
            grid: cat_grid.clone(),
            counts: members.iter().map(|m| m.len() as f64).collect(),
            n: data.n_rows() as f64,
        };
        let cell_counts = perturb_histogram(rng, &raw_counts, eps_cells)?;

        let cont: Vec<&[f64]> = self
            .continuous
            .iter()
            .map(|c| data.continuous(c))
            .collect::<Result<_>>()?;
        let d = cont.len();
        let mut cell_histograms = Vec::with_capacity(n_cells);
        for (k, rows) in members.iter().enumerate() {
            let axes = self
                .continuous
                .iter()
                .zip(&cont)
                .zip(&self.cell_bounds[k])
                .map(|((name, col), (lo, hi))| {
                    let xs: Vec<f64> = rows.iter().map(|r| col[*r]).collect();
                    Axis::Binned {
                        name: name.to_string(),
                        lo: *lo,
                        hi: *hi,
                        bins: choose_bins(&xs, *lo, *hi, self.rule, d),
                    }
                })
                .collect();
            let grid = GridSpec::new(axes)?;
            let mut counts = vec![0.0; grid.n_cells()];
            for r in rows {
                let mut idx = 0;
                for (axis, col) in grid.axes().iter().zip(&cont) {
                    idx = idx * axis.size() + axis.bin_of(col[*r])?;
                }
                counts[idx] += 1.0;
            }
            let raw = Histogram {
                grid,
                counts,
                n: rows.len() as f64,
            };
            cell_histograms.push(match perturb_histogram(rng, &raw, eps_hist) {
                Err(DipsError::AllCellsZero) => Histogram {
                    counts: vec![0.0; raw.counts.len()],
                    n: 0.0,
                    grid: raw.grid,
                },
                other => other?,
            });
        }

        let cell_rows = sample_multinomial(rng, n_out as u64, &cell_counts.proportions()?)?;
        let mut cat_cols: Vec<Vec<u32>> = vec![Vec::with_capacity(n_out); self.categorical.len()];
        let mut cont_cols: Vec<Vec<f64>> = vec![Vec::with_capacity(n_out); d];
        for (k, &c) in cell_rows.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let coords = cat_grid.coords(k);
            // A cell whose within-cell histogram sanitized to all zeros gets
            // a uniform density over its box.
            let hist = &cell_histograms[k];
            let dens = match hist.to_density() {
                Err(DipsError::AllCellsZero) => {
                    let cells = hist.grid.n_cells();
                    GridDensity::new(hist.grid.clone(), vec![1.0 / cells as f64; cells])?
                }
                other => other?,
            };
            let block = sample_from_histogram(rng, &dens, c as usize)?;
            for (j, col) in block.columns().iter().enumerate() {
                if let ColumnData::Continuous(v) = col {
                    cont_cols[j].extend_from_slice(v);
                }
            }
            for (j, coord) in coords.iter().enumerate() {
                cat_cols[j].extend(std::iter::repeat_n(*coord as u32, c as usize));
            }
        }
        let mut schema_cols = Vec::new();
        let mut data_cols = Vec::new();
        for (name, v) in self.categorical.iter().zip(cat_cols) {
            schema_cols.push(data.schema().columns[data.schema().index_of(name)?].clone());
            data_cols.push(ColumnData::Categorical(v));
        }
        for (j, (name, v)) in self.continuous.iter().zip(cont_cols).enumerate() {
            let lo = self
                .cell_bounds
                .iter()
                .map(|b| b[j].0)
                .fold(f64::INFINITY, f64::min);
            let hi = self
                .cell_bounds
                .iter()
                .map(|b| b[j].1)
                .fold(f64::NEG_INFINITY, f64::max);
            schema_cols.push(ColumnSpec::Continuous {
                name: name.to_string(),
                lo,
                hi,
            });
            data_cols.push(ColumnData::Continuous(v));
        }
        let synthetic = TabularDataset::new(Schema::new(schema_cols)?, data_cols)?;
        Ok(MixedRelease {
            cell_counts,
            cell_histograms,
            cell_rows,
            synthetic,
        })
    }
}

fn release_record(
    method: &str,
    rng: &RngStream,
    sets: Vec<TabularDataset>,
    ledger: &PrivacyLedger,
    m: usize,
) -> SyntheticRelease {
    let eps = ledger.total().epsilon();
    SyntheticRelease {
        method: method.into(),
        sets,
        eps_total: Some(eps),
        per_set_eps: Some(eps / m as f64),
        seed: rng.seed(),
        stream: rng.stream_id(),
        ledger: Some(ledger.audit()),
    }
}

/// `m` sets, each drawn from its own perturbed cross-tab of the categorical
/// `columns` at ε/m.
pub fn laplace_crosstab_release(
    rng: &mut RngStream,
    data: &TabularDataset,
    columns: &[&str],
    m: usize,
    ledger: &mut PrivacyLedger,
) -> Result<SyntheticRelease> {
    check_m(m)?;
    let start = rng.clone();
    let eps_set = ledger.total().epsilon() / m as f64;
    let mut sets = Vec::with_capacity(m);
    for j in 0..m {
        charge_histogram(ledger, &format!("set{}", j + 1), Share::new(1, m as u64), 1)?;
        sets.push(
            laplace_sanitizer_crosstab(rng, data, columns, eps_set, data.n_rows())?.synthetic,
        );
    }
    Ok(release_record("laplace", &start, sets, ledger, m))
}

/// `m` sets, each sampled from its own perturbed histogram over `columns`
/// at ε/m. Bin counts come from `rule` applied to the raw data.
pub fn perturbed_histogram_release(
    rng: &mut RngStream,
    data: &TabularDataset,
    columns: &[&str],
    rule: BinRule,
    m: usize,
    ledger: &mut PrivacyLedger,
) -> Result<SyntheticRelease> {
    check_m(m)?;
    let start = rng.clone();
    let grid = grid_for(data, columns, rule)?;
    let hist = build_histogram(data, &grid)?;
    let eps_set = ledger.total().epsilon() / m as f64;
    let mut sets = Vec::with_capacity(m);
    for j in 0..m {
        charge_histogram(
            ledger,
            &format!("set{}", j + 1),
            Share::new(1, m as u64),
            grid.n_cells(),
        )?;
        let p = perturb_histogram(rng, &hist, eps_set)?;
        sets.push(sample_from_histogram(rng, &p.to_density()?, data.n_rows())?);
    }
    Ok(release_record("pert-hist", &start, sets, ledger, m))
}

/// One set sampled from the smoothed histogram, spending all of `ledger`.
pub fn smoothed_histogram_release(
    rng: &mut RngStream,
    data: &TabularDataset,
    columns: &[&str],
    rule: BinRule,
    ledger: &mut PrivacyLedger,
) -> Result<SyntheticRelease> {
    let start = rng.clone();
    let grid = grid_for(data, columns, rule)?;
    let hist = build_histogram(data, &grid)?;
    ledger.charge_share(
        "smooth-hist",
        Share::from_integer(1),
        Composition::Sequential,
    )?;
    let sm = smooth_histogram(&hist, ledger.total().epsilon())?;
    let set = sample_from_histogram(rng, &sm.density, data.n_rows())?;
    Ok(release_record("smooth-hist", &start, vec![set], ledger, 1))
}

fn check_m(m: usize) -> Result<()> {
    if m == 0 {
        return Err(DipsError::Config("m must be at least 1".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::budget::PrivacyBudget;
    use crate::gof::{ks_critical_001, ks_statistic};
    use crate::randvar::RngStream;
    use proptest::prelude::*;

    fn one_d(xs: Vec<f64>, lo: f64, hi: f64) -> TabularDataset {
        TabularDataset::new(
            Schema::new(vec![ColumnSpec::continuous("x", lo, hi)]).unwrap(),
            vec![ColumnData::Continuous(xs)],
        )
        .unwrap()
    }

    fn binned(lo: f64, hi: f64, bins: usize) -> GridSpec {
        GridSpec::new(vec![Axis::Binned {
            name: "x".into(),
            lo,
            hi,
            bins,
        }])
        .unwrap()
    }

    #[test]
    fn scott_width() {
        assert!((bin_width_scott(1.0, 1000).unwrap() - 0.35).abs() < 1e-12);
        assert!(bin_width_scott(1.0, 1).is_err());
        assert!(bin_width_scott(0.0, 10).is_err());
        assert_eq!(bin_count_sturges(1000).unwrap(), 11);
    }

    #[test]
    fn multivariate_scott_reproduces_tabled_bin_counts() {
        // Per-cell n and the tabled median 2-d bin count over an 8-sd range.
        for (n, bins) in [(41, 36), (76, 49), (7, 16), (12, 25), (70, 49)] {
            let per = bin_count(-4.0, 4.0, bin_width_scott_dim(1.0, n, 2).unwrap());
            assert_eq!(per * per, bins, "n = {n}");
        }
    }

    #[test]
    fn counts_point_mass_and_uniform_grid() {
        let h = build_histogram(&one_d(vec![0.1; 10], 0.0, 1.0), &binned(0.0, 1.0, 4)).unwrap();
        assert_eq!(h.counts, vec![10.0, 0.0, 0.0, 0.0]);
        let xs: Vec<f64> = (0..100).map(|i| (i as f64 + 0.5) / 100.0).collect();
        let h = build_histogram(&one_d(xs, 0.0, 1.0), &binned(0.0, 1.0, 10)).unwrap();
        assert!(h.counts.iter().all(|c| *c == 10.0));
        let dens = h.density_values().unwrap();
        assert!(dens.iter().all(|d| (d - 1.0).abs() < 1e-12));
    }

    #[test]
    fn out_of_domain_rows_rejected() {
        let ds = one_d(vec![0.5, 2.0], 0.0, 3.0);
        let err = build_histogram(&ds, &binned(0.0, 1.0, 2)).unwrap_err();
        assert!(matches!(err, DipsError::OutOfDomain { .. }));
    }

    #[test]
    fn perturbation_limits() {
        let mut rng = RngStream::new(1, 0);
        let h = build_histogram(
            &one_d(
                vec![0.2, 0.2, 0.2, 0.2, 0.2, 0.7, 0.7, 0.7, 0.7, 0.7],
                0.0,
                1.0,
            ),
            &binned(0.0, 1.0, 2),
        )
        .unwrap();
        assert_eq!(h.proportions().unwrap(), vec![0.5, 0.5]);
        let mut hits = 0;
        for _ in 0..2000 {
            let p = perturb_histogram(&mut rng, &h, 1e6).unwrap();
            hits += p
                .counts
                .iter()
                .zip(&h.counts)
                .all(|(a, b)| (a - b).abs() < 0.01) as usize;
        }
        assert!(hits >= 1998);
        let zero = Histogram {
            grid: binned(0.0, 1.0, 2),
            counts: vec![0.0, 0.0],
            n: 0.0,
        };
        let mut seen_all_zero = false;
        for _ in 0..200 {
            match perturb_histogram(&mut rng, &zero, 1.0) {
                Err(DipsError::AllCellsZero) => seen_all_zero = true,
                Ok(p) => assert!(p.counts.iter().all(|c| *c >= 0.0)),
                Err(e) => panic!("{e}"),
            }
        }
        assert!(seen_all_zero);
    }

    #[test]
    fn parallel_charges_cost_one_epsilon() {
        let mut ledger = PrivacyLedger::new(PrivacyBudget::new(2.0).unwrap());
        charge_histogram(&mut ledger, "hist", Share::new(1, 2), 24).unwrap();
        assert_eq!(ledger.exact_share_spent(), Some(Share::new(1, 2)));
        assert!((ledger.effective_spend() - 1.0).abs() < 1e-15);
        assert_eq!(ledger.entries().len(), 24);
    }

    fn lambda_oracle(k: f64, n: f64, eps: f64) -> f64 {
        // e^x - 1 by its power series, free of cancellation.
        let x = eps / n;
        let (mut term, mut sum) = (x, 0.0);
        for j in 2..40 {
            sum += term;
            term *= x / j as f64;
        }
        k / (k + n * sum)
    }

    #[test]
    fn lambda_value_and_limits() {
        let l = smooth_lambda(10, 100, 1.0).unwrap();
        assert!((l - lambda_oracle(10.0, 100.0, 1.0)).abs() < 1e-14);
        assert!((l - 0.90868).abs() < 1e-5);
        assert!(smooth_lambda(10, 100, 1e-12).unwrap() > 1.0 - 1e-9);
        assert!(smooth_lambda(10, 100, 1e4).unwrap() < 1e-20);
    }

    #[test]
    fn lambda_monotone() {
        for ki in 1..=20 {
            for ei in 1..=20 {
                let eps = (ei as f64 / 2.0 - 5.0).exp();
                let here = smooth_lambda(ki, 100, eps).unwrap();
                if ei < 20 {
                    assert!(
                        smooth_lambda(ki, 100, ((ei + 1) as f64 / 2.0 - 5.0).exp()).unwrap() < here
                    );
                }
                if ki < 20 {
                    assert!(smooth_lambda(ki + 1, 100, eps).unwrap() > here);
                }
            }
        }
    }

    #[test]
    fn smoothed_density_integrates_to_one_and_is_floored() {
        let xs: Vec<f64> = (0..200).map(|i| (i as f64 / 199.0).powi(3)).collect();
        let h = build_histogram(&one_d(xs, 0.0, 1.0), &binned(0.0, 1.0, 8)).unwrap();
        let s = smooth_histogram(&h, 0.5).unwrap();
        let omega = 1.0 / h.grid.total_volume();
        let integral: f64 = (0..8)
            .map(|k| s.density.cell_density(k) * h.grid.cell_volume())
            .sum();
        assert!((integral - 1.0).abs() < 1e-9);
        assert!((0..8).all(|k| s.density.cell_density(k) >= s.lambda * omega * (1.0 - 1e-12)));
    }

    #[test]
    fn sampling_containment_and_symmetry() {
        let mut rng = RngStream::new(2, 0);
        let g = binned(0.0, 1.0, 10);
        let mut p = vec![0.0; 10];
        p[2] = 1.0;
        let out = sample_from_histogram(&mut rng, &GridDensity::new(g, p).unwrap(), 1000).unwrap();
        assert!(out
            .continuous("x")
            .unwrap()
            .iter()
            .all(|x| (0.2..0.3).contains(x)));

        let g = binned(0.0, 2.0, 2);
        let out = sample_from_histogram(
            &mut rng,
            &GridDensity::new(g, vec![0.5, 0.5]).unwrap(),
            100_000,
        )
        .unwrap();
        let left = out
            .continuous("x")
            .unwrap()
            .iter()
            .filter(|x| **x < 1.0)
            .count();
        assert!((left as f64 / 1e5 - 0.5).abs() < 0.01);
    }

    #[test]
    fn sampled_cdf_is_piecewise_linear() {
        let mut rng = RngStream::new(3, 0);
        let probs = vec![0.1, 0.4, 0.2, 0.3];
        let g = binned(-1.0, 3.0, 4);
        let n = 50_000;
        let out = sample_from_histogram(&mut rng, &GridDensity::new(g, probs.clone()).unwrap(), n)
            .unwrap();
        let cdf = |x: f64| {
            let t = (x + 1.0).clamp(0.0, 4.0);
            let k = (t.floor() as usize).min(3);
            probs[..k].iter().sum::<f64>() + probs[k] * (t - k as f64)
        };
        let d = ks_statistic(out.continuous("x").unwrap().to_vec(), cdf);
        assert!(d < ks_critical_001(n), "D = {d}");
    }

    #[test]
    fn crosstab_vanishing_noise_and_binary_release() {
        let mut rng = RngStream::new(4, 0);
        let schema = Schema::new(vec![ColumnSpec::categorical("b", &["0", "1"])]).unwrap();
        let ds = TabularDataset::new(
            schema,
            vec![ColumnData::Categorical([vec![1; 30], vec![0; 70]].concat())],
        )
        .unwrap();
        let rel = laplace_sanitizer_crosstab(&mut rng, &ds, &["b"], 1e6, 100_000).unwrap();
        let ones = rel
            .synthetic
            .categorical("b")
            .unwrap()
            .iter()
            .filter(|v| **v == 1)
            .count();
        assert!((ones as f64 / 1e5 - 0.3).abs() < 0.01);
        let (s, ones) = laplace_sanitizer_binary(&mut rng, 30, 100, 1e6).unwrap();
        assert!((s - 30.0).abs() < 1e-3 && ones == 30);
        let (s, _) = laplace_sanitizer_binary(&mut rng, 30, 100, 1e-9).unwrap();
        assert!(s == 0.0 || s == 100.0);
    }

    #[test]
    fn mixed_release_shapes() {
        let mut rng = RngStream::new(5, 0);
        let schema = Schema::new(vec![
            ColumnSpec::categorical("w", &["a", "b"]),
            ColumnSpec::continuous("z", -5.0, 5.0),
        ])
        .unwrap();
        let w: Vec<u32> = (0..400).map(|i| (i % 2) as u32).collect();
        let z: Vec<f64> = (0..400)
            .map(|i| if i % 2 == 0 { -1.0 } else { 1.0 } + (i as f64 / 400.0 - 0.5))
            .collect();
        let ds = TabularDataset::new(
            schema,
            vec![ColumnData::Categorical(w), ColumnData::Continuous(z)],
        )
        .unwrap();
        let synth = MixedHistogramSynthesizer {
            categorical: vec!["w"],
            continuous: vec!["z"],
            cell_bounds: vec![vec![(-5.0, 3.0)], vec![(-3.0, 5.0)]],
            rule: BinRule::Scott,
        };
        let rel = synth.release(&mut rng, &ds, 1e6, 1e6, 400).unwrap();
        assert_eq!(rel.synthetic.n_rows(), 400);
        assert_eq!(rel.empty_cells(), 0);
        let w = rel.synthetic.categorical("w").unwrap();
        let z = rel.synthetic.continuous("z").unwrap();
        let mean_a: f64 = w
            .iter()
            .zip(z)
            .filter(|(w, _)| **w == 0)
            .map(|(_, z)| *z)
            .sum::<f64>()
            / w.iter().filter(|w| **w == 0).count() as f64;
        assert!((mean_a + 1.0).abs() < 0.3, "{mean_a}");
    }

    #[test]
    fn zeroed_cell_histogram_falls_back_to_uniform() {
        let schema = Schema::new(vec![
            ColumnSpec::categorical("w", &["a"]),
            ColumnSpec::continuous("z", 0.0, 1.0),
        ])
        .unwrap();
        let ds = TabularDataset::new(
            schema,
            vec![
                ColumnData::Categorical(vec![0; 50]),
                ColumnData::Continuous(vec![0.05; 50]),
            ],
        )
        .unwrap();
        let synth = MixedHistogramSynthesizer {
            categorical: vec!["w"],
            continuous: vec!["z"],
            cell_bounds: vec![vec![(0.0, 1.0)]],
            rule: BinRule::Sturges,
        };
        let mut hits = 0;
        for seed in 0..200 {
            let mut rng = RngStream::new(seed, 1);
            let rel = synth.release(&mut rng, &ds, 1e6, 1e-9, 2000).unwrap();
            if rel.cell_histograms[0].counts.iter().all(|c| *c == 0.0) {
                hits += 1;
                let z = rel.synthetic.continuous("z").unwrap();
                let above = z.iter().filter(|v| **v > 0.5).count() as f64 / 2000.0;
                assert!((above - 0.5).abs() < 0.05, "{above}");
            }
        }
        assert!(hits > 0);
    }

    #[test]
    fn histogram_json_round_trip() {
        let h = build_histogram(&one_d(vec![0.1, 0.9], 0.0, 1.0), &binned(0.0, 1.0, 2)).unwrap();
        let j = serde_json::to_string(&h).unwrap();
        assert!(j.contains("\"binned\""));
        assert_eq!(serde_json::from_str::<Histogram>(&j).unwrap(), h);
    }

    proptest! {
        #[test]
        fn counts_are_conserved(xs in prop::collection::vec(0.0f64..=1.0, 1..300), bins in 1usize..30) {
            let n = xs.len();
            let h = build_histogram(&one_d(xs, 0.0, 1.0), &binned(0.0, 1.0, bins)).unwrap();
            prop_assert_eq!(h.counts.iter().sum::<f64>(), n as f64);
            let p = h.proportions().unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn cell_index_round_trips(a in 1usize..5, b in 1usize..5, c in 1usize..5, pick in 0usize..1000) {
            let g = GridSpec::new(vec![
                Axis::Categorical { name: "p".into(), levels: (0..a).map(|i| i.to_string()).collect() },
                Axis::Binned { name: "q".into(), lo: 0.0, hi: 1.0, bins: b },
                Axis::Categorical { name: "r".into(), levels: (0..c).map(|i| i.to_string()).collect() },
            ]).unwrap();
            let cell = pick % g.n_cells();
            prop_assert_eq!(g.cell_index(&g.coords(cell)), cell);
        }
    }
}
