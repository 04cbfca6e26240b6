//! Parametric synthesis: Multinomial-Dirichlet and BB-MR synthesizers, and
//! the model-based engine that sanitizes sufficient statistics, draws from
//! the posterior given them, and simulates from the predictive.

mod logistic;
mod models;

pub use logistic::{
    simulate_sequential_logistic, LogisticDraw, MhSettings, SequentialLogisticModel, FACTOR_CEIL,
    FACTOR_FLOOR, LIK_FLOOR,
};
pub use models::{
    BernoulliModel, GaussianMixtureModel, MixtureDraw, NormalDraw, NormalModel, NormalSanitization,
};

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::budget::{ratio_to_f64, Composition, LedgerAudit, PrivacyLedger, Share};
use crate::data::{ColumnData, ColumnSpec, Schema, TabularDataset};
use crate::error::{DipsError, Result};
use crate::hist_synth::{build_histogram, Axis, GridSpec};
use crate::mechanisms::{
    laplace_mechanism, laplace_scale, postprocess_bit, postprocess_truncate, SensitivitySpec,
};
use crate::randvar::{
    laplace_noise, sample_binomial, sample_dirichlet, sample_multinomial, RngStream,
};

/// m synthetic sets plus what is needed to reproduce and audit them.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticRelease {
    pub method: String,
    pub sets: Vec<TabularDataset>,
    /// `None` for non-private multiple synthesis.
    pub eps_total: Option<f64>,
    pub per_set_eps: Option<f64>,
    pub seed: u64,
    pub stream: u64,
    pub ledger: Option<LedgerAudit>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReleaseManifest {
    pub method: String,
    pub eps_total: Option<f64>,
    pub per_set_eps: Option<f64>,
    pub m: usize,
    pub n: usize,
    pub seed: u64,
    pub stream: u64,
    pub files: Vec<String>,
    pub schema: Schema,
    pub ledger: Option<LedgerAudit>,
}

impl SyntheticRelease {
    pub fn m(&self) -> usize {
        self.sets.len()
    }

    pub fn manifest(&self) -> ReleaseManifest {
        ReleaseManifest {
            method: self.method.clone(),
            eps_total: self.eps_total,
            per_set_eps: self.per_set_eps,
            m: self.m(),
            n: self.sets.first().map_or(0, TabularDataset::n_rows),
            seed: self.seed,
            stream: self.stream,
            files: (1..=self.m())
                .map(|j| format!("synthetic_{j}.csv"))
                .collect(),
            schema: self
                .sets
                .first()
                .map(|s| s.schema().clone())
                .unwrap_or_default(),
            ledger: self.ledger.clone(),
        }
    }

    /// Write `synthetic_<j>.csv` per set and `manifest.json` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let manifest = self.manifest();
        for (set, name) in self.sets.iter().zip(&manifest.files) {
            set.write_csv(fs::File::create(dir.join(name))?)?;
        }
        fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        Ok(())
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(DipsError::InvalidBudget(eps))
    }
}

/// Prior pseudo-count that makes the MD synthesizer ε-DP, `n/(e^ε - 1)`,
/// evaluated in log space and capped to stay finite.
pub fn md_alpha(n: u64, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    let log_alpha = (n as f64).ln() - eps.exp_m1().ln();
    Ok(log_alpha.min(f64::MAX.ln() - 1.0).exp())
}

/// BB-MR prior pseudo-count `(e^{ε/n} - 1)^{-1}`.
pub fn bbmr_alpha(n: u64, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    if n == 0 {
        return Err(DipsError::ParameterDomain("n must be positive".into()));
    }
    Ok(1.0 / (eps / n as f64).exp_m1())
}

/// m sets of synthetic cell counts: each set draws π* ~ Dirichlet(α* + n)
/// with α* from its share ε/m, then counts ~ Multinomial(n, π*).
pub fn md_synthesizer<R: Rng + ?Sized>(
    rng: &mut R,
    counts: &[u64],
    eps: f64,
    m: usize,
) -> Result<Vec<Vec<u64>>> {
    check_eps(eps)?;
    if m == 0 || counts.is_empty() {
        return Err(DipsError::ParameterDomain(
            "need m >= 1 and at least one cell".into(),
        ));
    }
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return Err(DipsError::ParameterDomain("counts sum to zero".into()));
    }
    let alpha = md_alpha(n, eps / m as f64)?;
    (0..m)
        .map(|_| {
            let a: Vec<f64> = counts.iter().map(|c| alpha + *c as f64).collect();
            let pi = sample_dirichlet(rng, &a)?;
            sample_multinomial(rng, n, &pi)
        })
        .collect()
}

/// Single BB-MR set: `p* = (n1 + α)/(n + 2α)`, ones ~ Binomial(n, p*).
/// Returns `(p*, ones)`.
pub fn bbmr_synthesizer<R: Rng + ?Sized>(
    rng: &mut R,
    n1: u64,
    n: u64,
    eps: f64,
) -> Result<(f64, u64)> {
    if n1 > n {
        return Err(DipsError::ParameterDomain(format!(
            "n1 = {n1} exceeds n = {n}"
        )));
    }
    let alpha = bbmr_alpha(n, eps)?;
    let p = if alpha.is_finite() {
        (n1 as f64 + alpha) / (n as f64 + 2.0 * alpha)
    } else {
        0.5
    };
    Ok((p, sample_binomial(rng, n, p)?))
}

fn categorical_grid(data: &TabularDataset, columns: &[&str]) -> Result<GridSpec> {
    GridSpec::new(
        columns
            .iter()
            .map(
                |c| match &data.schema().columns[data.schema().index_of(c)?] {
                    ColumnSpec::Categorical { name, levels } => Ok(Axis::Categorical {
                        name: name.clone(),
                        levels: levels.clone(),
                    }),
                    _ => Err(DipsError::Schema(format!(
                        "column `{c}` is not categorical"
                    ))),
                },
            )
            .collect::<Result<_>>()?,
    )
}

/// Rows listing each cell of `grid` `counts[k]` times, in shuffled order.
pub fn rows_from_counts<R: Rng + ?Sized>(
    rng: &mut R,
    grid: &GridSpec,
    counts: &[u64],
) -> Result<TabularDataset> {
    use rand::seq::SliceRandom;
    let mut cells: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(k, c)| std::iter::repeat_n(k, *c as usize))
        .collect();
    cells.shuffle(rng);
    let mut cols = vec![Vec::with_capacity(cells.len()); grid.axes().len()];
    for k in cells {
        for (col, c) in cols.iter_mut().zip(grid.coords(k)) {
            col.push(c as u32);
        }
    }
    TabularDataset::new(
        grid.schema()?,
        cols.into_iter().map(ColumnData::Categorical).collect(),
    )
}

/// MD synthesis of the cross-tab of categorical `columns`, charged to the
/// whole of `ledger` (ε/m sequentially per set).
pub fn md_release(
    rng: &mut RngStream,
    data: &TabularDataset,
    columns: &[&str],
    m: usize,
    ledger: &mut PrivacyLedger,
) -> Result<SyntheticRelease> {
    let eps = ledger.total().epsilon();
    let grid = categorical_grid(data, columns)?;
    let counts: Vec<u64> = build_histogram(data, &grid)?
        .counts
        .iter()
        .map(|c| *c as u64)
        .collect();
    let (seed, stream) = (rng.seed(), rng.stream_id());
    let synth = md_synthesizer(rng, &counts, eps, m)?;
    let mut sets = Vec::with_capacity(m);
    for (j, c) in synth.iter().enumerate() {
        ledger.charge_share(
            format!("set{}/md-prior", j + 1),
            Share::new(1, m as u64),
            Composition::Sequential,
        )?;
        sets.push(rows_from_counts(rng, &grid, c)?);
    }
    Ok(SyntheticRelease {
        method: "md".into(),
        sets,
        eps_total: Some(eps),
        per_set_eps: Some(eps / m as f64),
        seed,
        stream,
        ledger: Some(ledger.audit()),
    })
}

/// BB-MR release of one binary `column`: a single set, spending all of
/// `ledger` on the prior.
pub fn bbmr_release(
    rng: &mut RngStream,
    data: &TabularDataset,
    column: &str,
    ledger: &mut PrivacyLedger,
) -> Result<SyntheticRelease> {
    let grid = categorical_grid(data, &[column])?;
    if grid.n_cells() != 2 {
        return Err(DipsError::Schema(format!(
            "column `{column}` must have exactly two levels"
        )));
    }
    let (seed, stream) = (rng.seed(), rng.stream_id());
    let n = data.n_rows() as u64;
    let n1 = data
        .categorical(column)?
        .iter()
        .filter(|v| **v == 1)
        .count() as u64;
    let eps = ledger.total().epsilon();
    ledger.charge_share(
        "bbmr-prior",
        Share::from_integer(1),
        Composition::Sequential,
    )?;
    let (_, ones) = bbmr_synthesizer(rng, n1, n, eps)?;
    let set = rows_from_counts(rng, &grid, &[n - ones, ones])?;
    Ok(SyntheticRelease {
        method: "bbmr".into(),
        sets: vec![set],
        eps_total: Some(eps),
        per_set_eps: Some(eps),
        seed,
        stream,
        ledger: Some(ledger.audit()),
    })
}

/// How sanitized values are brought back into their legitimate range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Legitimize {
    #[default]
    Bit,
    Truncate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupLayout {
    /// Entries are computed on disjoint subsets of rows; each gets the full
    /// group share and they compose in parallel.
    Disjoint,
    /// Entries overlap; one Laplace draw per entry at the summed sensitivity.
    Conjoint,
}

/// A vector-valued sufficient statistic and how to sanitize it.
#[derive(Debug, Clone, PartialEq)]
pub struct StatGroup {
    pub label: String,
    pub values: Vec<f64>,
    /// Per-entry l1 sensitivity. A zero marks an absent entry (e.g. the
    /// mean of an empty cell), which is passed through without noise.
    pub sensitivity: Vec<f64>,
    pub bounds: Vec<(f64, f64)>,
    pub layout: GroupLayout,
    pub weight: u64,
}

/// A scalar the posterior sampler may evaluate repeatedly on the data (the
/// likelihood at a proposed parameter), answered with fresh Laplace noise.
#[derive(Debug, Clone, PartialEq)]
pub struct QuerySpec {
    pub label: String,
    pub sensitivity: f64,
    pub bounds: (f64, f64),
    pub weight: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Statistics {
    pub groups: Vec<StatGroup>,
    pub queries: Vec<QuerySpec>,
}

/// Answers a query with Laplace noise and BIT, or exactly when non-private.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoisyQuery {
    pub scale: Option<f64>,
    pub lo: f64,
    pub hi: f64,
}

impl NoisyQuery {
    pub fn answer<R: Rng + ?Sized>(&self, rng: &mut R, raw: f64) -> f64 {
        match self.scale {
            Some(b) => (raw + laplace_noise(rng, b)).clamp(self.lo, self.hi),
            None => raw,
        }
    }

    pub fn is_private(&self) -> bool {
        self.scale.is_some()
    }
}

/// Sanitized statistics handed to the posterior sampler.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SanitizedStats {
    pub groups: Vec<(String, Vec<f64>)>,
    pub queries: Vec<(String, NoisyQuery)>,
}

impl SanitizedStats {
    pub fn get(&self, label: &str) -> Result<&[f64]> {
        self.groups
            .iter()
            .find(|(l, _)| l == label)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| DipsError::Config(format!("no sanitized statistic `{label}`")))
    }

    pub fn query(&self, label: &str) -> Result<NoisyQuery> {
        self.queries
            .iter()
            .find(|(l, _)| l == label)
            .map(|(_, q)| *q)
            .ok_or_else(|| DipsError::Config(format!("no query `{label}`")))
    }
}

pub trait ModipsModel: Sync {
    type Draw: Clone + Send;

    fn name(&self) -> &str;

    fn statistics(&self, data: &TabularDataset) -> Result<Statistics>;

    /// Draw parameters given sanitized statistics. `data` may only be read
    /// through the queries in `stats`. Substitutions made to keep the
    /// posterior proper are appended to `flags`.
    fn posterior_draw(
        &self,
        rng: &mut RngStream,
        stats: &SanitizedStats,
        data: &TabularDataset,
        flags: &mut Vec<String>,
    ) -> Result<Self::Draw>;

    fn predictive_draw(
        &self,
        rng: &mut RngStream,
        draw: &Self::Draw,
        schema: &Schema,
        n: usize,
    ) -> Result<TabularDataset>;
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ModipsOptions {
    pub m: usize,
    pub legitimize: Legitimize,
    /// Overrides the model's weights: statistic groups first, then queries.
    pub allocation: Option<Vec<u64>>,
}

impl ModipsOptions {
    pub fn new(m: usize) -> Self {
        Self {
            m,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModipsOutput<D> {
    pub release: SyntheticRelease,
    pub draws: Vec<D>,
    pub sanitized: Vec<SanitizedStats>,
    pub flags: Vec<Vec<String>>,
}

fn sanitize_group(
    rng: &mut RngStream,
    g: &StatGroup,
    eps: f64,
    legit: Legitimize,
) -> Result<Vec<f64>> {
    let present: Vec<usize> = (0..g.values.len())
        .filter(|i| g.sensitivity[*i] > 0.0)
        .collect();
    let mut out = g.values.clone();
    let delta_total: f64 = present.iter().map(|i| g.sensitivity[*i]).sum();
    for i in present {
        let delta = match g.layout {
            GroupLayout::Disjoint => g.sensitivity[i],
            GroupLayout::Conjoint => delta_total,
        };
        let s = laplace_mechanism(rng, &[g.values[i]], SensitivitySpec::new(delta)?, eps)?
            .with_label(&g.label);
        let (lo, hi) = g.bounds[i];
        let s = match legit {
            Legitimize::Bit => postprocess_bit(s, lo, hi)?,
            Legitimize::Truncate => postprocess_truncate(rng, s, lo, hi)?,
        };
        out[i] = s.sanitized[0];
    }
    Ok(out)
}

fn validate_stats(stats: &Statistics) -> Result<()> {
    for g in &stats.groups {
        if g.sensitivity.len() != g.values.len() || g.bounds.len() != g.values.len() {
            return Err(DipsError::Config(format!(
                "statistic `{}` is missing sensitivities or bounds",
                g.label
            )));
        }
        if g.sensitivity.iter().any(|d| !(*d >= 0.0) || !d.is_finite()) {
            return Err(DipsError::Config(format!(
                "statistic `{}` has an invalid sensitivity",
                g.label
            )));
        }
    }
    Ok(())
}

/// Run the model-based synthesizer for `opts.m` sets, spending `whole` of
/// `ledger`'s total: each set gets `whole/m`, split over the statistic
/// groups and queries by weight.
pub fn modips_release<M: ModipsModel>(
    rng: &RngStream,
    data: &TabularDataset,
    model: &M,
    ledger: &mut PrivacyLedger,
    whole: Share,
    opts: &ModipsOptions,
) -> Result<ModipsOutput<M::Draw>> {
    if opts.m == 0 {
        return Err(DipsError::Config("m must be at least 1".into()));
    }
    let stats = model.statistics(data)?;
    validate_stats(&stats)?;
    let weights: Vec<u64> = match &opts.allocation {
        Some(w) if w.len() == stats.groups.len() + stats.queries.len() => w.clone(),
        Some(_) => {
            return Err(DipsError::Config(
                "allocation must give one weight per statistic and query".into(),
            ))
        }
        None => stats
            .groups
            .iter()
            .map(|g| g.weight)
            .chain(stats.queries.iter().map(|q| q.weight))
            .collect(),
    };
    let wsum: u64 = weights.iter().sum();
    if wsum == 0 || weights.contains(&0) {
        return Err(DipsError::Config(
            "allocation weights must be positive".into(),
        ));
    }
    let per_set = whole * Share::new(1, opts.m as u64);
    let eps_total = ledger.total().epsilon() * ratio_to_f64(whole);

    let mut out = ModipsOutput {
        release: SyntheticRelease {
            method: format!("modips-{}", model.name()),
            sets: Vec::with_capacity(opts.m),
            eps_total: Some(eps_total),
            per_set_eps: Some(eps_total / opts.m as f64),
            seed: rng.seed(),
            stream: rng.stream_id(),
            ledger: None,
        },
        draws: Vec::with_capacity(opts.m),
        sanitized: Vec::with_capacity(opts.m),
        flags: Vec::with_capacity(opts.m),
    };
    for j in 0..opts.m {
        let mut r = rng.child(j as u64);
        let mut sanitized = SanitizedStats::default();
        let mut w = weights.iter();
        for g in &stats.groups {
            let share = per_set * Share::new(*w.next().expect("weights cover groups"), wsum);
            let label = format!("set{}/{}", j + 1, g.label);
            match g.layout {
                GroupLayout::Conjoint => {
                    ledger.charge_share(&label, share, Composition::Sequential)?
                }
                GroupLayout::Disjoint => {
                    for i in 0..g.values.len() {
                        ledger.charge_share(
                            format!("{label}[{i}]"),
                            share,
                            Composition::parallel(&label),
                        )?;
                    }
                }
            }
            let eps = ledger.total().epsilon() * ratio_to_f64(share);
            sanitized.groups.push((
                g.label.clone(),
                sanitize_group(&mut r, g, eps, opts.legitimize)?,
            ));
        }
        for q in &stats.queries {
            let share = per_set * Share::new(*w.next().expect("weights cover queries"), wsum);
            ledger.charge_share(
                format!("set{}/{}", j + 1, q.label),
                share,
                Composition::Sequential,
            )?;
            let eps = ledger.total().epsilon() * ratio_to_f64(share);
            sanitized.queries.push((
                q.label.clone(),
                NoisyQuery {
                    scale: Some(laplace_scale(q.sensitivity, eps)),
                    lo: q.bounds.0,
                    hi: q.bounds.1,
                },
            ));
        }
        let mut flags = Vec::new();
        let draw = model.posterior_draw(&mut r, &sanitized, data, &mut flags)?;
        out.release.sets.push(model.predictive_draw(
            &mut r,
            &draw,
            data.schema(),
            data.n_rows(),
        )?);
        out.draws.push(draw);
        out.sanitized.push(sanitized);
        out.flags.push(flags);
    }
    out.release.ledger = Some(ledger.audit());
    Ok(out)
}

/// Non-private multiple synthesis: the same model with the sanitization
/// step skipped.
pub fn ms_release<M: ModipsModel>(
    rng: &RngStream,
    data: &TabularDataset,
    model: &M,
    m: usize,
) -> Result<ModipsOutput<M::Draw>> {
    if m == 0 {
        return Err(DipsError::Config("m must be at least 1".into()));
    }
    let stats = model.statistics(data)?;
    validate_stats(&stats)?;
    let exact = SanitizedStats {
        groups: stats
            .groups
            .iter()
            .map(|g| (g.label.clone(), g.values.clone()))
            .collect(),
        queries: stats
            .queries
            .iter()
            .map(|q| {
                (
                    q.label.clone(),
                    NoisyQuery {
                        scale: None,
                        lo: q.bounds.0,
                        hi: q.bounds.1,
                    },
                )
            })
            .collect(),
    };
    let mut out = ModipsOutput {
        release: SyntheticRelease {
            method: format!("ms-{}", model.name()),
            sets: Vec::with_capacity(m),
            eps_total: None,
            per_set_eps: None,
            seed: rng.seed(),
            stream: rng.stream_id(),
            ledger: None,
        },
        draws: Vec::with_capacity(m),
        sanitized: Vec::with_capacity(m),
        flags: Vec::with_capacity(m),
    };
    for j in 0..m {
        let mut r = rng.child(j as u64);
        let mut flags = Vec::new();
        let draw = model.posterior_draw(&mut r, &exact, data, &mut flags)?;
        out.release.sets.push(model.predictive_draw(
            &mut r,
            &draw,
            data.schema(),
            data.n_rows(),
        )?);
        out.draws.push(draw);
        out.sanitized.push(exact.clone());
        out.flags.push(flags);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::budget::PrivacyBudget;

    #[test]
    fn md_alpha_value() {
        let a = md_alpha(1000, 1.0).unwrap();
        assert!((a - 1000.0 / (std::f64::consts::E - 1.0)).abs() < 1e-9);
        assert!((a - 581.977).abs() < 1e-3);
        assert!(md_alpha(40, 1e-300).unwrap().is_finite());
    }

    #[test]
    fn bbmr_alpha_value_and_fixed_point() {
        let a = bbmr_alpha(100, 1.0).unwrap();
        let oracle =
            1.0 / (0.01 + 0.01f64.powi(2) / 2.0 + 0.01f64.powi(3) / 6.0 + 0.01f64.powi(4) / 24.0);
        assert!((a - oracle).abs() < 1e-6);
        assert!((a - 99.5008).abs() < 1e-4);
        let mut rng = RngStream::new(1, 0);
        for eps in [1e-6, 0.1, 1.0, 100.0] {
            assert_eq!(bbmr_synthesizer(&mut rng, 50, 100, eps).unwrap().0, 0.5);
        }
        let (p, _) = bbmr_synthesizer(&mut rng, 30, 100, 1e5).unwrap();
        assert!((p - 0.3).abs() < 1e-12);
    }

    #[test]
    fn md_large_eps_tracks_sample_proportions() {
        let mut rng = RngStream::new(2, 0);
        let counts = [300, 700];
        let sets = md_synthesizer(&mut rng, &counts, 20.0 * 200.0, 200).unwrap();
        let mean = sets.iter().map(|s| s[0] as f64 / 1000.0).sum::<f64>() / 200.0;
        assert!((mean - 0.3).abs() < 0.01, "{mean}");
    }

    #[test]
    fn md_pulls_toward_half_at_small_eps() {
        let mut rng = RngStream::new(3, 0);
        let counts = [10, 30];
        let mut total = 0.0;
        for _ in 0..400 {
            let sets = md_synthesizer(&mut rng, &counts, 0.05, 5).unwrap();
            total += sets.iter().map(|s| s[0] as f64 / 40.0).sum::<f64>() / 5.0;
        }
        let mean = total / 400.0;
        assert!((mean - 0.5).abs() < 0.02, "{mean}");
    }

    #[test]
    fn md_release_spends_exactly() {
        let schema = Schema::new(vec![ColumnSpec::categorical("b", &["0", "1"])]).unwrap();
        let ds = TabularDataset::new(
            schema.clone(),
            vec![ColumnData::Categorical(vec![0, 1, 1, 0, 1])],
        )
        .unwrap();
        let mut ledger = PrivacyLedger::new(PrivacyBudget::new(1.0).unwrap());
        let mut rng = RngStream::new(4, 0);
        let rel = md_release(&mut rng, &ds, &["b"], 5, &mut ledger).unwrap();
        assert_eq!(ledger.exact_share_spent(), Some(Share::from_integer(1)));
        assert!(rel
            .sets
            .iter()
            .all(|s| s.n_rows() == 5 && s.schema() == &schema));
    }

    #[test]
    fn release_writes_csv_and_manifest() {
        let schema = Schema::new(vec![ColumnSpec::categorical("b", &["0", "1"])]).unwrap();
        let ds = TabularDataset::new(schema, vec![ColumnData::Categorical(vec![0, 1, 1])]).unwrap();
        let rel = SyntheticRelease {
            method: "t".into(),
            sets: vec![ds.clone(), ds],
            eps_total: Some(1.0),
            per_set_eps: Some(0.5),
            seed: 9,
            stream: 0,
            ledger: None,
        };
        let dir = tempfile::tempdir().unwrap();
        rel.write_dir(dir.path()).unwrap();
        let m: ReleaseManifest =
            serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap())
                .unwrap();
        assert_eq!(m.files, vec!["synthetic_1.csv", "synthetic_2.csv"]);
        assert!(dir.path().join("synthetic_2.csv").exists());
    }
}
