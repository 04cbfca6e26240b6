//! Monte-Carlo studies: simulate data, run each synthesizer over a grid of
//! budgets, analyze the synthetic sets and aggregate bias, RMSE, coverage
//! and CI width.

mod sims;

pub use sims::{
    analyze_release, analyze_set, mean_empty_cells, release_usable, run_method, sim1_schema,
    sim2_bounds, sim2_schema, sim3_cell_bounds, sim3_pi, sim3_schema, sim4_betas, sim4_model,
    sim4_schema, simulate_truth, simulate_truth_sim1, simulate_truth_sim2, simulate_truth_sim3,
    simulate_truth_sim4, targets, MethodRun, Target, SIM3_LEVELS, SIM3_TRUTH, SIM4_BETA1,
    SIM4_BETA2, SIM4_BETA3, SIM4_BETA4,
};

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::budget::Share;
use crate::error::{DipsError, Result};
use crate::hist_synth::BinRule;
use crate::param_synth::{Legitimize, MhSettings, NormalSanitization};
use crate::randvar::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Study {
    Sim1,
    Sim2,
    Sim3,
    Sim4,
}

impl Study {
    pub fn tag(self) -> &'static str {
        match self {
            Study::Sim1 => "sim1",
            Study::Sim2 => "sim2",
            Study::Sim3 => "sim3",
            Study::Sim4 => "sim4",
        }
    }

    pub fn methods(self) -> &'static [Method] {
        use Method::*;
        match self {
            Study::Sim1 => &[Original, Ms, Modips, Md, Bbmr, Laplace],
            Study::Sim2 => &[Original, Ms, Modips, PertHist, SmoothHist],
            Study::Sim3 | Study::Sim4 => &[Original, Ms, Modips, PertHist],
        }
    }
}

impl std::str::FromStr for Study {
    type Err = DipsError;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase()))
            .map_err(|_| DipsError::Config(format!("unknown study `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Analysis of the confidential data itself.
    Original = 0,
    /// Non-private multiple synthesis.
    Ms = 1,
    Modips = 2,
    Md = 3,
    Bbmr = 4,
    Laplace = 5,
    PertHist = 6,
    SmoothHist = 7,
}

impl Method {
    pub fn tag(self) -> &'static str {
        match self {
            Method::Original => "original",
            Method::Ms => "ms",
            Method::Modips => "modips",
            Method::Md => "md",
            Method::Bbmr => "bbmr",
            Method::Laplace => "laplace",
            Method::PertHist => "pert_hist",
            Method::SmoothHist => "smooth_hist",
        }
    }

    pub fn is_private(self) -> bool {
        !matches!(self, Method::Original | Method::Ms)
    }
}

fn default_pi() -> f64 {
    0.5
}
fn default_one() -> f64 {
    1.0
}
fn default_rho() -> f64 {
    0.5
}
fn default_m() -> usize {
    5
}
fn default_level() -> f64 {
    0.95
}
fn default_rule() -> BinRule {
    BinRule::Scott
}
fn default_sanitization() -> NormalSanitization {
    NormalSanitization::Individual {
        mean: 1,
        variance: 1,
    }
}

/// Truth parameters; each study reads the fields it needs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    /// Bernoulli success probability.
    #[serde(default = "default_pi")]
    pub pi: f64,
    #[serde(default)]
    pub mu: f64,
    /// Common variance of the continuous variables.
    #[serde(default = "default_one")]
    pub sigma2: f64,
    #[serde(default = "default_rho")]
    pub rho: f64,
    /// Bound the normal study at μ ± 4σ instead of [μ - 3σ, μ + 4σ].
    #[serde(default)]
    pub symmetric_bounds: bool,
}

impl Default for Truth {
    fn default() -> Self {
        Self {
            pi: default_pi(),
            mu: 0.0,
            sigma2: 1.0,
            rho: default_rho(),
            symmetric_bounds: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub study: Study,
    pub n: usize,
    #[serde(default)]
    pub truth: Truth,
    pub eps_grid: Vec<f64>,
    #[serde(default = "default_m")]
    pub m: usize,
    pub reps: usize,
    pub methods: Vec<Method>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub postprocess: Legitimize,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default = "default_sanitization")]
    pub normal_sanitization: NormalSanitization,
    #[serde(default)]
    pub mh: MhSettings,
    #[serde(default = "default_rule")]
    pub bin_rule: BinRule,
}

/// `k` budgets with logarithms evenly spaced over `[ln_lo, ln_hi]`.
pub fn log_eps_grid(ln_lo: f64, ln_hi: f64, k: usize) -> Vec<f64> {
    match k {
        0 => vec![],
        1 => vec![ln_lo.exp()],
        _ => (0..k)
            .map(|i| (ln_lo + (ln_hi - ln_lo) * i as f64 / (k - 1) as f64).exp())
            .collect(),
    }
}

impl StudyConfig {
    /// Desk-scale defaults: 9-point budget grids over the published ranges,
    /// 500 replications (200 for the logistic study).
    pub fn desk_default(study: Study) -> Self {
        let (n, ln_lo, reps) = match study {
            Study::Sim1 => (40, -10.0, 500),
            Study::Sim2 => (100, -10.0, 500),
            Study::Sim3 => (1000, -6.0, 500),
            Study::Sim4 => (1000, -6.0, 200),
        };
        Self {
            study,
            n,
            truth: Truth::default(),
            eps_grid: log_eps_grid(ln_lo, 8.0, 9),
            m: 5,
            reps,
            methods: study.methods().to_vec(),
            seed: 20_180_101,
            postprocess: Legitimize::Bit,
            level: 0.95,
            normal_sanitization: default_sanitization(),
            mh: MhSettings::default(),
            bin_rule: BinRule::Scott,
        }
    }

    pub fn from_json<R: Read>(r: R) -> Result<Self> {
        let cfg: Self = serde_json::from_reader(r).map_err(|e| DipsError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(DipsError::Config(msg));
        if self.reps == 0 {
            return bad("reps must be at least 1".into());
        }
        if self.m == 0 {
            return bad("m must be at least 1".into());
        }
        if self.eps_grid.is_empty() {
            return bad("eps_grid must not be empty".into());
        }
        if self.eps_grid.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return bad("eps_grid must hold positive finite budgets".into());
        }
        if self.eps_grid.windows(2).any(|w| w[0] >= w[1]) {
            return bad("eps_grid must be strictly increasing".into());
        }
        if self.methods.is_empty() {
            return bad("methods must not be empty".into());
        }
        if let Some(m) = self
            .methods
            .iter()
            .find(|m| !self.study.methods().contains(m))
        {
            return bad(format!(
                "method `{}` is not available for {}",
                m.tag(),
                self.study.tag()
            ));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return bad("level must be in (0, 1)".into());
        }
        let t = &self.truth;
        if !(t.pi > 0.0 && t.pi < 1.0)
            || !(t.sigma2 > 0.0)
            || !(t.rho.abs() < 1.0)
            || !t.mu.is_finite()
        {
            return bad("truth parameters out of range".into());
        }
        let min_n = match self.study {
            Study::Sim1 | Study::Sim2 => 4,
            Study::Sim3 => 30,
            Study::Sim4 => 10,
        };
        if self.n < min_n {
            return bad(format!(
                "n must be at least {min_n} for {}",
                self.study.tag()
            ));
        }
        Ok(())
    }
}

/// One line of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub study: Study,
    pub method: Method,
    pub parameter: String,
    /// Infinite for the non-private baselines.
    pub eps: f64,
    pub bias: f64,
    pub rmse: f64,
    pub coverage: f64,
    pub ci_width: f64,
    pub usable_fraction: f64,
    pub reps_used: usize,
}

impl MetricRow {
    /// Monte-Carlo standard error of the mean estimate behind `bias`.
    pub fn bias_se(&self) -> f64 {
        if self.reps_used < 2 {
            return f64::INFINITY;
        }
        let n = self.reps_used as f64;
        ((self.rmse * self.rmse - self.bias * self.bias).max(0.0) * n / (n - 1.0) / n).sqrt()
    }
}

/// Per-(method, ε) averages that are not tied to a parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRow {
    pub study: Study,
    pub method: Method,
    pub eps: f64,
    pub name: String,
    pub mean: f64,
    pub reps: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BudgetAudit {
    pub releases_checked: usize,
    pub violations: usize,
    /// Largest |effective spend - ε| seen.
    pub max_abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub config: StudyConfig,
    pub metrics: Vec<MetricRow>,
    pub diagnostics: Vec<DiagnosticRow>,
    pub audit: BudgetAudit,
    /// First few replication failures, for the index file.
    pub failures: Vec<String>,
    pub failure_count: usize,
}

impl StudyReport {
    pub fn metric(&self, method: Method, parameter: &str, eps: f64) -> Option<&MetricRow> {
        self.metrics.iter().find(|r| {
            r.method == method
                && r.parameter == parameter
                && (r.eps == eps || (r.eps - eps).abs() <= 1e-12 * eps.abs())
        })
    }

    pub fn diagnostic(&self, method: Method, name: &str, eps: f64) -> Option<&DiagnosticRow> {
        self.diagnostics.iter().find(|r| {
            r.method == method && r.name == name && (r.eps - eps).abs() <= 1e-12 * eps.abs()
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    /// Replications on the rayon pool when the `parallel` feature is on,
    /// otherwise sequentially.
    #[default]
    Parallel,
    Sequential,
}

/// Outcome of one method at one budget on one replication.
#[derive(Debug, Clone)]
struct Cell {
    estimates: Vec<Option<(f64, f64, f64)>>,
    usable: bool,
    empty_cells: Option<f64>,
    flags: usize,
    audit: Option<(bool, f64)>,
    error: Option<String>,
}

/// (method, ε index or None for non-private) pairs in output order.
fn slots(cfg: &StudyConfig) -> Vec<(Method, Option<usize>)> {
    let mut out = Vec::new();
    for &m in &cfg.methods {
        if m.is_private() {
            out.extend((0..cfg.eps_grid.len()).map(|e| (m, Some(e))));
        } else {
            out.push((m, None));
        }
    }
    out
}

fn run_rep(cfg: &StudyConfig, rep: usize, slots: &[(Method, Option<usize>)]) -> Vec<Cell> {
    let root = RngStream::new(cfg.seed, 0).child(rep as u64);
    let failed = |e: String| Cell {
        estimates: vec![],
        usable: false,
        empty_cells: None,
        flags: 0,
        audit: None,
        error: Some(e),
    };
    let data = match simulate_truth(&mut root.child(0), cfg) {
        Ok(d) => d,
        Err(e) => {
            return slots
                .iter()
                .map(|_| failed(format!("rep {rep}: data: {e}")))
                .collect()
        }
    };
    slots
        .iter()
        .map(|&(method, e)| {
            let rng = root.path(&[1, method as u64, e.map_or(u64::MAX, |e| e as u64)]);
            let eps = e.map(|i| cfg.eps_grid[i]);
            match run_method(cfg, &data, method, eps, &rng) {
                Ok(run) => {
                    let audit = run.ledger.as_ref().map(|l| {
                        let exact = l.exact_share_spent() == Some(Share::from_integer(1));
                        (exact, (l.effective_spend() - l.total().epsilon()).abs())
                    });
                    Cell {
                        estimates: analyze_release(cfg, &run.sets)
                            .into_iter()
                            .map(|c| c.map(|c| (c.point, c.ci_low, c.ci_high)))
                            .collect(),
                        usable: release_usable(cfg, &run.sets),
                        empty_cells: mean_empty_cells(cfg, &run.sets),
                        flags: run.flags,
                        audit,
                        error: None,
                    }
                }
                Err(err) => failed(format!(
                    "rep {rep}, {} at eps {:?}: {err}",
                    method.tag(),
                    eps
                )),
            }
        })
        .collect()
}

fn run_reps(cfg: &StudyConfig, exec: Execution) -> Vec<Vec<Cell>> {
    let slots = slots(cfg);
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..cfg.reps)
                .into_par_iter()
                .map(|r| run_rep(cfg, r, &slots))
                .collect()
        }
        _ => (0..cfg.reps).map(|r| run_rep(cfg, r, &slots)).collect(),
    }
}

#[derive(Debug, Clone, Default)]
struct Acc {
    n: usize,
    sum: f64,
    sum_sq: f64,
    covered: usize,
    width: f64,
}

/// Run every replication and aggregate. Per-replication failures are
/// recorded and counted as unusable; they never abort the study.
pub fn run_study(cfg: &StudyConfig) -> Result<StudyReport> {
    run_study_with(cfg, Execution::default())
}

pub fn run_study_with(cfg: &StudyConfig, exec: Execution) -> Result<StudyReport> {
    cfg.validate()?;
    let slots = slots(cfg);
    let targets = targets(cfg);
    let reps = run_reps(cfg, exec);

    let mut metrics = Vec::new();
    let mut diagnostics = Vec::new();
    let mut audit = BudgetAudit::default();
    let mut failures = Vec::new();
    let mut failure_count = 0;
    for (s, &(method, e)) in slots.iter().enumerate() {
        let eps = e.map_or(f64::INFINITY, |i| cfg.eps_grid[i]);
        let mut accs = vec![Acc::default(); targets.len()];
        let (mut usable, mut empty, mut empty_n, mut flags) = (0usize, 0.0, 0usize, 0usize);
        for rep in &reps {
            let cell = &rep[s];
            if let Some(err) = &cell.error {
                failure_count += 1;
                if failures.len() < 20 {
                    failures.push(err.clone());
                }
                continue;
            }
            if let Some((exact, err)) = cell.audit {
                audit.releases_checked += 1;
                audit.violations += usize::from(!exact);
                audit.max_abs_error = audit.max_abs_error.max(err);
            }
            flags += cell.flags;
            if let Some(v) = cell.empty_cells {
                empty += v;
                empty_n += 1;
            }
            if !cell.usable {
                continue;
            }
            usable += 1;
            for ((acc, t), est) in accs.iter_mut().zip(&targets).zip(&cell.estimates) {
                if let Some((point, lo, hi)) = est {
                    let d = (point - t.truth) / t.scale;
                    acc.n += 1;
                    acc.sum += d;
                    acc.sum_sq += d * d;
                    acc.covered += usize::from(*lo <= t.truth && t.truth <= *hi);
                    acc.width += (hi - lo) / t.scale;
                }
            }
        }
        let r = cfg.reps as f64;
        for (acc, t) in accs.iter().zip(&targets) {
            let k = acc.n as f64;
            let avg = |v: f64| if acc.n > 0 { v / k } else { f64::NAN };
            metrics.push(MetricRow {
                study: cfg.study,
                method,
                parameter: t.parameter.clone(),
                eps,
                bias: avg(acc.sum),
                rmse: avg(acc.sum_sq).sqrt(),
                coverage: avg(acc.covered as f64),
                ci_width: avg(acc.width),
                usable_fraction: k / r,
                reps_used: acc.n,
            });
        }
        diagnostics.push(DiagnosticRow {
            study: cfg.study,
            method,
            eps,
            name: "usable".into(),
            mean: usable as f64 / r,
            reps: cfg.reps,
        });
        diagnostics.push(DiagnosticRow {
            study: cfg.study,
            method,
            eps,
            name: "posterior_flags".into(),
            mean: flags as f64 / r,
            reps: cfg.reps,
        });
        if empty_n > 0 {
            diagnostics.push(DiagnosticRow {
                study: cfg.study,
                method,
                eps,
                name: "empty_cells".into(),
                mean: empty / empty_n as f64,
                reps: empty_n,
            });
        }
    }
    Ok(StudyReport {
        config: cfg.clone(),
        metrics,
        diagnostics,
        audit,
        failures,
        failure_count,
    })
}

pub const METRIC_COLUMNS: [&str; 10] = [
    "study",
    "method",
    "parameter",
    "eps",
    "bias",
    "rmse",
    "coverage",
    "ci_width",
    "usable_fraction",
    "reps_used",
];

pub fn write_metrics_csv<W: Write>(w: W, rows: &[MetricRow]) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(METRIC_COLUMNS)?;
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_metrics_csv<R: Read>(r: R) -> Result<Vec<MetricRow>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .map(|row| row.map_err(DipsError::from))
        .collect()
}

pub fn write_diagnostics_csv<W: Write>(w: W, rows: &[DiagnosticRow]) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(["study", "method", "eps", "name", "mean", "reps"])?;
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportIndex {
    pub version: String,
    pub git_describe: Option<String>,
    pub config: StudyConfig,
    pub metrics_file: String,
    pub diagnostics_file: String,
    pub audit: BudgetAudit,
    pub failure_count: usize,
    pub failures: Vec<String>,
}

fn git_describe() -> Option<String> {
    let out = std::process::Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()?;
    out.status
        .success()
        .then(|| String::from_utf8_lossy(&out.stdout).trim().to_string())
        .filter(|s| !s.is_empty())
}

/// Write `<study>_metrics.csv`, `<study>_diagnostics.csv` and
/// `<study>_index.json` into `dir`.
pub fn write_report(dir: &Path, report: &StudyReport) -> Result<ReportIndex> {
    fs::create_dir_all(dir)?;
    let tag = report.config.study.tag();
    let metrics_file = format!("{tag}_metrics.csv");
    let diagnostics_file = format!("{tag}_diagnostics.csv");
    write_metrics_csv(fs::File::create(dir.join(&metrics_file))?, &report.metrics)?;
    write_diagnostics_csv(
        fs::File::create(dir.join(&diagnostics_file))?,
        &report.diagnostics,
    )?;
    let index = ReportIndex {
        version: env!("CARGO_PKG_VERSION").to_string(),
        git_describe: git_describe(),
        config: report.config.clone(),
        metrics_file,
        diagnostics_file,
        audit: report.audit.clone(),
        failure_count: report.failure_count,
        failures: report.failures.clone(),
    };
    fs::write(
        dir.join(format!("{tag}_index.json")),
        serde_json::to_string_pretty(&index)?,
    )?;
    Ok(index)
}
