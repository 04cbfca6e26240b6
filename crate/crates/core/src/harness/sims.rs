//! Data-generating processes, synthesizer runs and per-set analyses of the
//! four simulation studies.

use rand::seq::SliceRandom;
use rand::Rng;

use super::{Method, Study, StudyConfig};
use crate::budget::{Composition, PrivacyBudget, PrivacyLedger, Share};
use crate::data::{ColumnData, ColumnSpec, Schema, TabularDataset};
use crate::error::{DipsError, Result};
use crate::hist_synth::{
    charge_histogram, laplace_sanitizer_binary, perturbed_histogram_release,
    smoothed_histogram_release, MixedHistogramSynthesizer,
};
use crate::inference::{
    combine, estimate_correlation, estimate_mean, estimate_proportion, estimate_variance,
    excess_kurtosis, firth_logistic, fit_multinomial_logit, CombinedEstimate, PerSetEstimate,
};
use crate::param_synth::{
    bbmr_release, md_release, modips_release, ms_release, simulate_sequential_logistic,
    BernoulliModel, GaussianMixtureModel, ModipsOptions, NormalModel, SequentialLogisticModel,
};
use crate::randvar::{sample_categorical, sample_normal, MvNormal, RngStream, SymmetricMatrix};

/// Cell means of the two continuous variables and cell probabilities for the
/// mixed-data study, cells ordered with the last categorical variable
/// varying fastest.
pub const SIM3_TRUTH: [(f64, f64, f64); 24] = [
    (1.371, -0.565, 0.041),
    (0.363, 0.633, 0.076),
    (0.404, -0.106, 0.024),
    (1.512, -0.095, 0.062),
    (2.018, -0.063, 0.045),
    (1.305, 2.287, 0.041),
    (-1.389, -0.279, 0.038),
    (-0.133, 0.636, 0.007),
    (-0.284, -2.656, 0.064),
    (-2.440, 1.320, 0.064),
    (-0.307, -1.781, 0.031),
    (-0.172, 1.215, 0.048),
    (1.895, -0.430, 0.053),
    (-0.257, -1.763, 0.007),
    (0.460, -0.640, 0.021),
    (0.455, 0.705, 0.065),
    (1.035, -0.609, 0.070),
    (0.505, -1.717, 0.012),
    (-0.784, -0.851, 0.024),
    (-2.414, 0.036, 0.028),
    (0.206, -0.361, 0.048),
    (0.758, -0.727, 0.011),
    (-1.368, 0.433, 0.058),
    (-0.811, 1.444, 0.062),
];

/// Level counts of the three categorical variables in the mixed-data study.
pub const SIM3_LEVELS: [usize; 3] = [2, 3, 4];

/// Coefficients of the sequential logistic study: w1 | z, w2 | z, w1, and the
/// two non-reference levels of w3 | z, w1, w2.
pub const SIM4_BETA1: [f64; 3] = [-1.0, 0.5, -1.0];
pub const SIM4_BETA2: [f64; 4] = [-2.0, -1.0, 1.5, 0.5];
pub const SIM4_BETA3: [f64; 5] = [0.0, -2.5, 1.0, 0.5, 0.4];
pub const SIM4_BETA4: [f64; 5] = [0.1, -1.0, -0.5, 0.0, 1.5];

/// Parameter name, true value, and the scale metrics are divided by.
#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    pub parameter: String,
    pub truth: f64,
    pub scale: f64,
}

fn target(parameter: impl Into<String>, truth: f64) -> Target {
    Target {
        parameter: parameter.into(),
        truth,
        scale: 1.0,
    }
}

fn levels(k: usize) -> Vec<String> {
    (0..k).map(|l| l.to_string()).collect()
}

fn categorical(name: &str, k: usize) -> ColumnSpec {
    ColumnSpec::Categorical {
        name: name.into(),
        levels: levels(k),
    }
}

// ------------------------------------------------------------------ sim 1

pub fn sim1_schema() -> Schema {
    Schema::new(vec![categorical("y", 2)]).expect("static schema")
}

pub fn simulate_truth_sim1<R: Rng + ?Sized>(
    rng: &mut R,
    cfg: &StudyConfig,
) -> Result<TabularDataset> {
    let y = (0..cfg.n)
        .map(|_| u32::from(rng.random::<f64>() < cfg.truth.pi))
        .collect();
    TabularDataset::new(sim1_schema(), vec![ColumnData::Categorical(y)])
}

// ------------------------------------------------------------------ sim 2

pub fn sim2_bounds(cfg: &StudyConfig) -> (f64, f64) {
    let sd = cfg.truth.sigma2.sqrt();
    let lower = if cfg.truth.symmetric_bounds { 4.0 } else { 3.0 };
    (cfg.truth.mu - lower * sd, cfg.truth.mu + 4.0 * sd)
}

pub fn sim2_schema(cfg: &StudyConfig) -> Schema {
    let (lo, hi) = sim2_bounds(cfg);
    Schema::new(vec![ColumnSpec::continuous("x", lo, hi)]).expect("static schema")
}

/// Rejection sampling of N(μ, σ²) restricted to `[lo, hi]`.
fn truncated_normal<R: Rng + ?Sized>(
    rng: &mut R,
    mu: f64,
    sd: f64,
    lo: f64,
    hi: f64,
) -> Result<f64> {
    for _ in 0..1_000_000 {
        let x = sample_normal(rng, mu, sd)?;
        if (lo..=hi).contains(&x) {
            return Ok(x);
        }
    }
    Err(DipsError::NonConvergence(
        "truncated normal rejection sampling".into(),
    ))
}

pub fn simulate_truth_sim2<R: Rng + ?Sized>(
    rng: &mut R,
    cfg: &StudyConfig,
) -> Result<TabularDataset> {
    let (lo, hi) = sim2_bounds(cfg);
    let sd = cfg.truth.sigma2.sqrt();
    let x = (0..cfg.n)
        .map(|_| truncated_normal(rng, cfg.truth.mu, sd, lo, hi))
        .collect::<Result<_>>()?;
    TabularDataset::new(sim2_schema(cfg), vec![ColumnData::Continuous(x)])
}

// ------------------------------------------------------------------ sim 3

/// Box of each cell: its true means ± 4σ.
pub fn sim3_cell_bounds(cfg: &StudyConfig) -> Vec<Vec<(f64, f64)>> {
    let w = 4.0 * cfg.truth.sigma2.sqrt();
    SIM3_TRUTH
        .iter()
        .map(|(m1, m2, _)| vec![(m1 - w, m1 + w), (m2 - w, m2 + w)])
        .collect()
}

pub fn sim3_schema(cfg: &StudyConfig) -> Schema {
    let b = sim3_cell_bounds(cfg);
    let span = |j: usize| {
        (
            b.iter().map(|c| c[j].0).fold(f64::INFINITY, f64::min),
            b.iter().map(|c| c[j].1).fold(f64::NEG_INFINITY, f64::max),
        )
    };
    let ((l1, h1), (l2, h2)) = (span(0), span(1));
    Schema::new(vec![
        categorical("w1", SIM3_LEVELS[0]),
        categorical("w2", SIM3_LEVELS[1]),
        categorical("w3", SIM3_LEVELS[2]),
        ColumnSpec::continuous("z1", l1, h1),
        ColumnSpec::continuous("z2", l2, h2),
    ])
    .expect("static schema")
}

fn sim_cov(cfg: &StudyConfig) -> Result<SymmetricMatrix> {
    let s2 = cfg.truth.sigma2;
    SymmetricMatrix::from_row_slice(2, &[s2, cfg.truth.rho * s2, cfg.truth.rho * s2, s2])
}

/// Cell probabilities of the truth table, renormalized (the printed values
/// are rounded).
pub fn sim3_pi() -> Vec<f64> {
    let total: f64 = SIM3_TRUTH.iter().map(|t| t.2).sum();
    SIM3_TRUTH.iter().map(|t| t.2 / total).collect()
}

pub fn simulate_truth_sim3<R: Rng + ?Sized>(
    rng: &mut R,
    cfg: &StudyConfig,
) -> Result<TabularDataset> {
    let pi = sim3_pi();
    let bounds = sim3_cell_bounds(cfg);
    let cov = sim_cov(cfg)?;
    let dists: Vec<MvNormal> = SIM3_TRUTH
        .iter()
        .map(|(m1, m2, _)| MvNormal::new(&[*m1, *m2], &cov))
        .collect::<Result<_>>()?;
    let mut cols: Vec<Vec<u32>> = (0..3).map(|_| Vec::with_capacity(cfg.n)).collect();
    let (mut z1, mut z2) = (Vec::with_capacity(cfg.n), Vec::with_capacity(cfg.n));
    for _ in 0..cfg.n {
        let k = sample_categorical(rng, &pi)?;
        let coords = [k / 12, (k / 4) % 3, k % 4];
        for (c, v) in cols.iter_mut().zip(coords) {
            c.push(v as u32);
        }
        let b = &bounds[k];
        let z = (0..1_000_000)
            .map(|_| dists[k].sample(rng))
            .find(|z| (b[0].0..=b[0].1).contains(&z[0]) && (b[1].0..=b[1].1).contains(&z[1]))
            .ok_or_else(|| DipsError::NonConvergence("truncated bivariate normal".into()))?;
        z1.push(z[0]);
        z2.push(z[1]);
    }
    let mut data: Vec<ColumnData> = cols.into_iter().map(ColumnData::Categorical).collect();
    data.push(ColumnData::Continuous(z1));
    data.push(ColumnData::Continuous(z2));
    TabularDataset::new(sim3_schema(cfg), data)
}

fn sim3_model(cfg: &StudyConfig) -> GaussianMixtureModel {
    GaussianMixtureModel::new(
        vec!["w1".into(), "w2".into(), "w3".into()],
        vec!["z1".into(), "z2".into()],
        sim3_cell_bounds(cfg),
    )
}

// ------------------------------------------------------------------ sim 4

pub fn sim4_schema(cfg: &StudyConfig) -> Schema {
    let w = 4.0 * cfg.truth.sigma2.sqrt();
    Schema::new(vec![
        ColumnSpec::categorical("w1", &["0", "1"]),
        ColumnSpec::categorical("w2", &["0", "1"]),
        ColumnSpec::categorical("w3", &["1", "2", "3"]),
        ColumnSpec::continuous("z1", -w, w),
        ColumnSpec::continuous("z2", -w, w),
    ])
    .expect("static schema")
}

pub fn sim4_model(cfg: &StudyConfig) -> SequentialLogisticModel {
    let mut m = SequentialLogisticModel::new(
        vec!["z1".into(), "z2".into()],
        vec!["w1".into(), "w2".into(), "w3".into()],
    );
    m.mh = cfg.mh;
    m
}

pub fn sim4_betas() -> Vec<Vec<f64>> {
    vec![
        SIM4_BETA1.to_vec(),
        SIM4_BETA2.to_vec(),
        SIM4_BETA3.iter().chain(&SIM4_BETA4).copied().collect(),
    ]
}

pub fn simulate_truth_sim4<R: Rng + ?Sized>(
    rng: &mut R,
    cfg: &StudyConfig,
) -> Result<TabularDataset> {
    let schema = sim4_schema(cfg);
    simulate_sequential_logistic(
        rng,
        &sim4_model(cfg),
        &schema,
        &[0.0, 0.0],
        &sim_cov(cfg)?,
        &sim4_betas(),
        cfg.n,
    )
}

pub fn simulate_truth<R: Rng + ?Sized>(rng: &mut R, cfg: &StudyConfig) -> Result<TabularDataset> {
    match cfg.study {
        Study::Sim1 => simulate_truth_sim1(rng, cfg),
        Study::Sim2 => simulate_truth_sim2(rng, cfg),
        Study::Sim3 => simulate_truth_sim3(rng, cfg),
        Study::Sim4 => simulate_truth_sim4(rng, cfg),
    }
}

// ---------------------------------------------------------------- targets

pub fn targets(cfg: &StudyConfig) -> Vec<Target> {
    match cfg.study {
        Study::Sim1 => vec![target("pi", cfg.truth.pi)],
        Study::Sim2 => vec![
            target("mu", cfg.truth.mu),
            Target {
                parameter: "sigma2".into(),
                truth: cfg.truth.sigma2,
                scale: cfg.truth.sigma2,
            },
        ],
        Study::Sim3 => {
            let pi = sim3_pi();
            let mut out = Vec::new();
            let marg = |axis: usize, level: usize| -> f64 {
                pi.iter()
                    .enumerate()
                    .filter(|(k, _)| [k / 12, (k / 4) % 3, k % 4][axis] == level)
                    .map(|(_, p)| p)
                    .sum()
            };
            for (axis, &k) in SIM3_LEVELS.iter().enumerate() {
                for level in 1..k {
                    out.push(target(
                        format!("P(w{}={level})", axis + 1),
                        marg(axis, level),
                    ));
                }
            }
            for j in 0..2 {
                for (k, t) in SIM3_TRUTH.iter().enumerate() {
                    out.push(target(
                        format!("mu{}[{}]", j + 1, k + 1),
                        if j == 0 { t.0 } else { t.1 },
                    ));
                }
            }
            out.push(target("sigma2_1", cfg.truth.sigma2));
            out.push(target("sigma2_2", cfg.truth.sigma2));
            out.push(target("rho", cfg.truth.rho));
            out
        }
        Study::Sim4 => {
            let mut out = vec![
                target("mu1", 0.0),
                target("mu2", 0.0),
                target("sigma2_1", cfg.truth.sigma2),
                target("sigma2_2", cfg.truth.sigma2),
                target("rho", cfg.truth.rho),
            ];
            for (name, b) in [
                ("beta1", &SIM4_BETA1[..]),
                ("beta2", &SIM4_BETA2[..]),
                ("beta3", &SIM4_BETA3[..]),
                ("beta4", &SIM4_BETA4[..]),
            ] {
                out.extend(
                    b.iter()
                        .enumerate()
                        .map(|(i, v)| target(format!("{name}[{i}]"), *v)),
                );
            }
            out
        }
    }
}

// --------------------------------------------------------------- analyses

/// Per-set estimates in the order of [`targets`]; `None` where a set does
/// not support the estimate.
pub fn analyze_set(cfg: &StudyConfig, set: &TabularDataset) -> Vec<Option<PerSetEstimate>> {
    match cfg.study {
        Study::Sim1 => {
            let y: Vec<bool> = set
                .categorical("y")
                .map(|v| v.iter().map(|x| *x == 1).collect())
                .unwrap_or_default();
            vec![estimate_proportion(&y).ok()]
        }
        Study::Sim2 => {
            let x = set.continuous("x").unwrap_or_default();
            vec![estimate_mean(x).ok(), estimate_variance(x).ok()]
        }
        Study::Sim3 => analyze_sim3(set).unwrap_or_else(|_| vec![None; targets(cfg).len()]),
        Study::Sim4 => analyze_sim4(cfg, set).unwrap_or_else(|_| vec![None; targets(cfg).len()]),
    }
}

fn proportion_of(v: &[u32], level: u32) -> Option<PerSetEstimate> {
    let b: Vec<bool> = v.iter().map(|x| *x == level).collect();
    estimate_proportion(&b).ok()
}

struct Pooled {
    /// Within-cell covariance, divisor n minus occupied cells.
    s: [[f64; 2]; 2],
    residuals: [Vec<f64>; 2],
    counts: Vec<usize>,
    means: Vec<[f64; 2]>,
}

fn pooled(cells: &[usize], z: [&[f64]; 2], n_cells: usize) -> Option<Pooled> {
    let n = cells.len();
    let mut counts = vec![0usize; n_cells];
    let mut sums = vec![[0.0; 2]; n_cells];
    for (i, &k) in cells.iter().enumerate() {
        counts[k] += 1;
        sums[k][0] += z[0][i];
        sums[k][1] += z[1][i];
    }
    let means: Vec<[f64; 2]> = sums
        .iter()
        .zip(&counts)
        .map(|(s, c)| {
            if *c > 0 {
                [s[0] / *c as f64, s[1] / *c as f64]
            } else {
                [f64::NAN; 2]
            }
        })
        .collect();
    let occupied = counts.iter().filter(|c| **c > 0).count();
    if n <= occupied + 1 {
        return None;
    }
    let mut res = [Vec::with_capacity(n), Vec::with_capacity(n)];
    let mut s = [[0.0; 2]; 2];
    for (i, &k) in cells.iter().enumerate() {
        let e = [z[0][i] - means[k][0], z[1][i] - means[k][1]];
        for a in 0..2 {
            for b in 0..2 {
                s[a][b] += e[a] * e[b];
            }
        }
        res[0].push(e[0]);
        res[1].push(e[1]);
    }
    let d = (n - occupied) as f64;
    for row in &mut s {
        for v in row.iter_mut() {
            *v /= d;
        }
    }
    Some(Pooled {
        s,
        residuals: res,
        counts,
        means,
    })
}

fn variance_estimate(s2: f64, residuals: &[f64], n: f64) -> Option<PerSetEstimate> {
    let kappa = excess_kurtosis(residuals).ok()?;
    PerSetEstimate::new(s2, (s2 * s2 * (2.0 / (n - 1.0) + kappa / n)).max(0.0)).ok()
}

fn correlation_estimate(s: &[[f64; 2]; 2], n: f64) -> Option<PerSetEstimate> {
    if !(s[0][0] > 0.0 && s[1][1] > 0.0) {
        return None;
    }
    let r = (s[0][1] / (s[0][0] * s[1][1]).sqrt()).clamp(-1.0, 1.0);
    PerSetEstimate::new(r, (1.0 - r * r) / (n - 2.0)).ok()
}

fn analyze_sim3(set: &TabularDataset) -> Result<Vec<Option<PerSetEstimate>>> {
    let w: Vec<&[u32]> = ["w1", "w2", "w3"]
        .iter()
        .map(|c| set.categorical(c))
        .collect::<Result<_>>()?;
    let z = [set.continuous("z1")?, set.continuous("z2")?];
    let n = set.n_rows();
    let mut out = Vec::new();
    for (axis, &k) in SIM3_LEVELS.iter().enumerate() {
        for level in 1..k {
            out.push(proportion_of(w[axis], level as u32));
        }
    }
    let cells: Vec<usize> = (0..n)
        .map(|i| w[0][i] as usize * 12 + w[1][i] as usize * 4 + w[2][i] as usize)
        .collect();
    let Some(Pooled {
        s,
        residuals: res,
        counts,
        means,
    }) = pooled(&cells, z, 24)
    else {
        out.extend(std::iter::repeat_n(None, 48 + 3));
        return Ok(out);
    };
    for j in 0..2 {
        for k in 0..24 {
            out.push(if counts[k] >= 2 {
                PerSetEstimate::new(means[k][j], s[j][j] / counts[k] as f64).ok()
            } else {
                None
            });
        }
    }
    let nf = n as f64;
    out.push(variance_estimate(s[0][0], &res[0], nf));
    out.push(variance_estimate(s[1][1], &res[1], nf));
    out.push(correlation_estimate(&s, nf));
    Ok(out)
}

fn analyze_sim4(cfg: &StudyConfig, set: &TabularDataset) -> Result<Vec<Option<PerSetEstimate>>> {
    let z1 = set.continuous("z1")?;
    let z2 = set.continuous("z2")?;
    let mut out = vec![
        estimate_mean(z1).ok(),
        estimate_mean(z2).ok(),
        estimate_variance(z1).ok(),
        estimate_variance(z2).ok(),
        estimate_correlation(z1, z2).ok(),
    ];
    let model = sim4_model(cfg);
    let ys: Vec<Vec<usize>> = model
        .outcomes
        .iter()
        .map(|o| {
            set.categorical(o)
                .map(|v| v.iter().map(|x| *x as usize).collect())
        })
        .collect::<Result<_>>()?;
    let binary = |t: usize, q: usize| -> Vec<Option<PerSetEstimate>> {
        let fit = model.design_matrix(set, t).and_then(|x| {
            let y: Vec<bool> = ys[t].iter().map(|v| *v == 1).collect();
            firth_logistic(&x, &y)
        });
        match fit {
            Ok(f) => f.estimates().into_iter().map(Some).collect(),
            Err(_) => vec![None; q],
        }
    };
    out.extend(binary(0, SIM4_BETA1.len()));
    out.extend(binary(1, SIM4_BETA2.len()));
    let q3 = SIM4_BETA3.len() + SIM4_BETA4.len();
    match model
        .design_matrix(set, 2)
        .and_then(|x| fit_multinomial_logit(&x, &ys[2], 3))
    {
        Ok(f) => out.extend(f.estimates().into_iter().map(Some)),
        Err(_) => out.extend(std::iter::repeat_n(None, q3)),
    }
    Ok(out)
}

/// Combine per-set estimates of every target; a parameter is `None` unless
/// every set supports it.
pub fn analyze_release(
    cfg: &StudyConfig,
    sets: &[TabularDataset],
) -> Vec<Option<CombinedEstimate>> {
    let per_set: Vec<Vec<Option<PerSetEstimate>>> =
        sets.iter().map(|s| analyze_set(cfg, s)).collect();
    (0..targets(cfg).len())
        .map(|p| {
            let ests: Option<Vec<PerSetEstimate>> = per_set.iter().map(|s| s[p]).collect();
            ests.and_then(|e| combine(&e, cfg.level).ok())
        })
        .collect()
}

/// A replication is usable when the pooled release can support the target
/// analysis at all: both binary levels for the Bernoulli study, and at least
/// one row everywhere else.
pub fn release_usable(cfg: &StudyConfig, sets: &[TabularDataset]) -> bool {
    match cfg.study {
        Study::Sim1 => {
            let mut seen = [false; 2];
            for s in sets {
                for v in s.categorical("y").unwrap_or_default() {
                    seen[*v as usize] = true;
                }
            }
            seen[0] && seen[1]
        }
        _ => sets.iter().all(|s| s.n_rows() > 0),
    }
}

/// Categorical cells with no synthetic rows, averaged over sets.
pub fn mean_empty_cells(cfg: &StudyConfig, sets: &[TabularDataset]) -> Option<f64> {
    let (cols, sizes): (&[&str], &[usize]) = match cfg.study {
        Study::Sim3 => (&["w1", "w2", "w3"], &SIM3_LEVELS),
        Study::Sim4 => (&["w1", "w2", "w3"], &[2, 2, 3]),
        _ => return None,
    };
    let k: usize = sizes.iter().product();
    let mut total = 0usize;
    for s in sets {
        let w: Vec<&[u32]> = cols
            .iter()
            .map(|c| s.categorical(c))
            .collect::<Result<_>>()
            .ok()?;
        let mut seen = vec![false; k];
        for i in 0..s.n_rows() {
            let idx = w
                .iter()
                .zip(sizes)
                .fold(0, |acc, (c, n)| acc * n + c[i] as usize);
            seen[idx] = true;
        }
        total += seen.iter().filter(|v| !**v).count();
    }
    Some(total as f64 / sets.len().max(1) as f64)
}

// ---------------------------------------------------------------- methods

/// Output of one synthesizer run on one replication's data.
#[derive(Debug, Clone)]
pub struct MethodRun {
    pub sets: Vec<TabularDataset>,
    pub ledger: Option<PrivacyLedger>,
    /// Posterior substitutions made to keep the posterior proper.
    pub flags: usize,
}

fn binary_set<R: Rng + ?Sized>(rng: &mut R, n: usize, ones: u64) -> Result<TabularDataset> {
    let mut y: Vec<u32> = (0..n).map(|i| u32::from((i as u64) < ones)).collect();
    y.shuffle(rng);
    TabularDataset::new(sim1_schema(), vec![ColumnData::Categorical(y)])
}

fn modips<M: crate::param_synth::ModipsModel>(
    rng: &RngStream,
    data: &TabularDataset,
    model: &M,
    cfg: &StudyConfig,
    mut ledger: PrivacyLedger,
) -> Result<MethodRun> {
    let mut opts = ModipsOptions::new(cfg.m);
    opts.legitimize = cfg.postprocess;
    let out = modips_release(rng, data, model, &mut ledger, Share::from_integer(1), &opts)?;
    Ok(MethodRun {
        sets: out.release.sets,
        ledger: Some(ledger),
        flags: out.flags.iter().map(Vec::len).sum(),
    })
}

fn ms<M: crate::param_synth::ModipsModel>(
    rng: &RngStream,
    data: &TabularDataset,
    model: &M,
    m: usize,
) -> Result<MethodRun> {
    let out = ms_release(rng, data, model, m)?;
    Ok(MethodRun {
        sets: out.release.sets,
        ledger: None,
        flags: out.flags.iter().map(Vec::len).sum(),
    })
}

fn mixed_hist(
    cfg: &StudyConfig,
    rng: &mut RngStream,
    data: &TabularDataset,
    mut ledger: PrivacyLedger,
) -> Result<MethodRun> {
    let cat = vec!["w1", "w2", "w3"];
    let bounds = match cfg.study {
        Study::Sim3 => sim3_cell_bounds(cfg),
        _ => {
            let w = 4.0 * cfg.truth.sigma2.sqrt();
            vec![vec![(-w, w), (-w, w)]; 12]
        }
    };
    let cells = bounds.len();
    let synth = MixedHistogramSynthesizer {
        categorical: cat,
        continuous: vec!["z1", "z2"],
        cell_bounds: bounds,
        rule: cfg.bin_rule,
    };
    let eps_set = cfg_eps(&ledger) / cfg.m as f64;
    let half = Share::new(1, 2 * cfg.m as u64);
    let mut sets = Vec::with_capacity(cfg.m);
    for j in 0..cfg.m {
        charge_histogram(&mut ledger, &format!("set{}/cells", j + 1), half, cells)?;
        charge_histogram(
            &mut ledger,
            &format!("set{}/within-cell", j + 1),
            half,
            cells,
        )?;
        let rel = synth.release(rng, data, eps_set / 2.0, eps_set / 2.0, data.n_rows())?;
        let schema = data.schema();
        let cols = schema
            .columns
            .iter()
            .map(|c| rel.synthetic.column(c.name()).cloned())
            .collect::<Result<_>>()?;
        sets.push(TabularDataset::new(schema.clone(), cols)?);
    }
    Ok(MethodRun {
        sets,
        ledger: Some(ledger),
        flags: 0,
    })
}

fn cfg_eps(ledger: &PrivacyLedger) -> f64 {
    ledger.total().epsilon()
}

fn unsupported(cfg: &StudyConfig, method: Method) -> DipsError {
    DipsError::Config(format!(
        "method `{}` is not available for {}",
        method.tag(),
        cfg.study.tag()
    ))
}

/// Run one synthesizer on one replication. Private methods get a fresh
/// ledger with total `eps` and must spend all of it.
pub fn run_method(
    cfg: &StudyConfig,
    data: &TabularDataset,
    method: Method,
    eps: Option<f64>,
    rng: &RngStream,
) -> Result<MethodRun> {
    let mut r = rng.clone();
    let ledger = match (method.is_private(), eps) {
        (true, Some(e)) => Some(PrivacyLedger::new(PrivacyBudget::new(e)?)),
        (true, None) => {
            return Err(DipsError::Config(format!(
                "method `{}` needs a budget",
                method.tag()
            )))
        }
        (false, _) => None,
    };
    let n = data.n_rows();
    match (cfg.study, method) {
        (_, Method::Original) => Ok(MethodRun {
            sets: vec![data.clone()],
            ledger: None,
            flags: 0,
        }),
        (Study::Sim1, Method::Ms) => ms(rng, data, &BernoulliModel::new("y"), cfg.m),
        (Study::Sim1, Method::Modips) => modips(
            rng,
            data,
            &BernoulliModel::new("y"),
            cfg,
            ledger.expect("private"),
        ),
        (Study::Sim1, Method::Md) => {
            let mut ledger = ledger.expect("private");
            let rel = md_release(&mut r, data, &["y"], cfg.m, &mut ledger)?;
            Ok(MethodRun {
                sets: rel.sets,
                ledger: Some(ledger),
                flags: 0,
            })
        }
        (Study::Sim1, Method::Bbmr) => {
            let mut ledger = ledger.expect("private");
            let rel = bbmr_release(&mut r, data, "y", &mut ledger)?;
            Ok(MethodRun {
                sets: rel.sets,
                ledger: Some(ledger),
                flags: 0,
            })
        }
        (Study::Sim1, Method::Laplace) => {
            let mut ledger = ledger.expect("private");
            let n1 = data.categorical("y")?.iter().filter(|v| **v == 1).count() as u64;
            let eps_set = cfg_eps(&ledger) / cfg.m as f64;
            let mut sets = Vec::with_capacity(cfg.m);
            for j in 0..cfg.m {
                ledger.charge_share(
                    format!("set{}/n1", j + 1),
                    Share::new(1, cfg.m as u64),
                    Composition::Sequential,
                )?;
                let (_, ones) = laplace_sanitizer_binary(&mut r, n1, n as u64, eps_set)?;
                sets.push(binary_set(&mut r, n, ones)?);
            }
            Ok(MethodRun {
                sets,
                ledger: Some(ledger),
                flags: 0,
            })
        }
        (Study::Sim2, Method::Ms) => ms(rng, data, &normal_model(cfg), cfg.m),
        (Study::Sim2, Method::Modips) => {
            modips(rng, data, &normal_model(cfg), cfg, ledger.expect("private"))
        }
        (Study::Sim2, Method::PertHist) => {
            let mut ledger = ledger.expect("private");
            let rel = perturbed_histogram_release(
                &mut r,
                data,
                &["x"],
                cfg.bin_rule,
                cfg.m,
                &mut ledger,
            )?;
            Ok(MethodRun {
                sets: rel.sets,
                ledger: Some(ledger),
                flags: 0,
            })
        }
        (Study::Sim2, Method::SmoothHist) => {
            let mut ledger = ledger.expect("private");
            let rel = smoothed_histogram_release(&mut r, data, &["x"], cfg.bin_rule, &mut ledger)?;
            Ok(MethodRun {
                sets: rel.sets,
                ledger: Some(ledger),
                flags: 0,
            })
        }
        (Study::Sim3, Method::Ms) => ms(rng, data, &sim3_model(cfg), cfg.m),
        (Study::Sim3, Method::Modips) => {
            modips(rng, data, &sim3_model(cfg), cfg, ledger.expect("private"))
        }
        (Study::Sim4, Method::Ms) => ms(rng, data, &sim4_model(cfg), cfg.m),
        (Study::Sim4, Method::Modips) => {
            modips(rng, data, &sim4_model(cfg), cfg, ledger.expect("private"))
        }
        (Study::Sim3 | Study::Sim4, Method::PertHist) => {
            mixed_hist(cfg, &mut r, data, ledger.expect("private"))
        }
        _ => Err(unsupported(cfg, method)),
    }
}

fn normal_model(cfg: &StudyConfig) -> NormalModel {
    NormalModel {
        column: "x".into(),
        sanitization: cfg.normal_sanitization,
    }
}
