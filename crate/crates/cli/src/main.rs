use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use dips::budget::{PrivacyBudget, PrivacyLedger, Share};
use dips::data::{ColumnSpec, Schema, TabularDataset};
use dips::error::DipsError;
use dips::harness::{run_study_with, write_report, Execution, Study, StudyConfig, StudyReport};
use dips::hist_synth::{
    laplace_crosstab_release, perturbed_histogram_release, smoothed_histogram_release, BinRule,
};
use dips::param_synth::{
    bbmr_release, md_release, modips_release, BernoulliModel, GaussianMixtureModel, Legitimize,
    ModipsModel, ModipsOptions, NormalModel, SequentialLogisticModel, SyntheticRelease,
};
use dips::randvar::RngStream;

#[derive(Parser)]
#[command(
    name = "dips",
    version,
    about = "Differentially private data synthesis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Release m synthetic copies of a CSV file.
    Synth(SynthArgs),
    /// Run a simulation study and write its metrics.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SynthMethod {
    Laplace,
    PertHist,
    SmoothHist,
    Md,
    Bbmr,
    ModipsBernoulli,
    ModipsNormal,
    ModipsMixture,
    ModipsLogistic,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Rule {
    Scott,
    Sturges,
    FreedmanDiaconis,
}

impl From<Rule> for BinRule {
    fn from(r: Rule) -> Self {
        match r {
            Rule::Scott => BinRule::Scott,
            Rule::Sturges => BinRule::Sturges,
            Rule::FreedmanDiaconis => BinRule::FreedmanDiaconis,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Postprocess {
    Bit,
    Truncate,
}

#[derive(clap::Args)]
struct SynthArgs {
    #[arg(long)]
    input: PathBuf,
    /// JSON schema; inferred from the data when absent, which is not private.
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long, value_enum)]
    method: SynthMethod,
    #[arg(long)]
    eps: f64,
    #[arg(long, default_value_t = 5)]
    m: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Columns to synthesize; defaults to every column the method accepts.
    #[arg(long, value_delimiter = ',')]
    columns: Vec<String>,
    #[arg(long, value_enum, default_value = "scott")]
    bins: Rule,
    #[arg(long, value_enum, default_value = "bit")]
    postprocess: Postprocess,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct BenchArgs {
    #[arg(long)]
    study: Study,
    /// JSON mirroring the study configuration; desk defaults when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Run replications on one thread.
    #[arg(long)]
    sequential: bool,
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Budget(String),
    Other(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Other(_) => 1,
            Failure::Config(_) => 2,
            Failure::Budget(_) => 3,
        }
    }
}

impl From<DipsError> for Failure {
    fn from(e: DipsError) -> Self {
        match e {
            DipsError::Config(_)
            | DipsError::Schema(_)
            | DipsError::ParameterDomain(_)
            | DipsError::InvalidBudget(_)
            | DipsError::OutOfDomain { .. } => Failure::Config(e.to_string()),
            DipsError::BudgetExhausted { .. } => Failure::Budget(e.to_string()),
            _ => Failure::Other(e.to_string()),
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(m) | Failure::Budget(m) | Failure::Other(m) => f.write_str(m),
        }
    }
}

fn read_file(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn load_input(args: &SynthArgs) -> Result<TabularDataset, Failure> {
    let text = read_file(&args.input)?;
    let schema = match &args.schema {
        Some(p) => serde_json::from_str::<Schema>(&read_file(p)?)
            .map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?,
        None => {
            eprintln!(
                "warning: schema inferred from the data; bounds and levels leak unless public"
            );
            TabularDataset::infer_schema(text.as_bytes())?
        }
    };
    Ok(TabularDataset::read_csv(text.as_bytes(), &schema)?)
}

fn names(ds: &TabularDataset, categorical: Option<bool>) -> Vec<String> {
    ds.schema()
        .columns
        .iter()
        .filter(|c| match categorical {
            None => true,
            Some(cat) => matches!(c, ColumnSpec::Categorical { .. }) == cat,
        })
        .map(|c| c.name().to_string())
        .collect()
}

/// Columns the method synthesizes: `--columns` when given, else every
/// column of the kind it accepts.
fn method_columns(
    ds: &TabularDataset,
    method: SynthMethod,
    wanted: &[String],
) -> Result<Vec<String>, Failure> {
    let kind = match method {
        SynthMethod::Laplace
        | SynthMethod::Md
        | SynthMethod::Bbmr
        | SynthMethod::ModipsBernoulli => Some(true),
        SynthMethod::ModipsNormal => Some(false),
        _ => None,
    };
    let cols = if wanted.is_empty() {
        names(ds, kind)
    } else {
        wanted.to_vec()
    };
    let single = matches!(
        method,
        SynthMethod::Bbmr | SynthMethod::ModipsBernoulli | SynthMethod::ModipsNormal
    );
    if cols.is_empty() || (single && cols.len() != 1) {
        return Err(Failure::Config(format!(
            "{} got {} column(s); pass --columns",
            method
                .to_possible_value()
                .expect("no skipped variants")
                .get_name(),
            cols.len()
        )));
    }
    Ok(cols)
}

fn modips<M: ModipsModel>(
    rng: &RngStream,
    data: &TabularDataset,
    model: &M,
    ledger: &mut PrivacyLedger,
    args: &SynthArgs,
) -> Result<SyntheticRelease, Failure> {
    let mut opts = ModipsOptions::new(args.m);
    opts.legitimize = match args.postprocess {
        Postprocess::Bit => Legitimize::Bit,
        Postprocess::Truncate => Legitimize::Truncate,
    };
    let out = modips_release(rng, data, model, ledger, Share::from_integer(1), &opts)?;
    for (j, flags) in out.flags.iter().enumerate() {
        for f in flags {
            eprintln!("set {}: {f}", j + 1);
        }
    }
    Ok(out.release)
}

fn synth(args: &SynthArgs) -> Result<(), Failure> {
    if args.m == 0 {
        return Err(Failure::Config("--m must be at least 1".into()));
    }
    let full = load_input(args)?;
    let cols = method_columns(&full, args.method, &args.columns)?;
    let cols: Vec<&str> = cols.iter().map(String::as_str).collect();
    let data = full.select(&cols)?;
    let mut ledger = PrivacyLedger::new(PrivacyBudget::new(args.eps)?);
    let mut rng = RngStream::new(args.seed, 0);
    let rule = BinRule::from(args.bins);
    let release = match args.method {
        SynthMethod::Laplace => {
            laplace_crosstab_release(&mut rng, &data, &cols, args.m, &mut ledger)?
        }
        SynthMethod::PertHist => {
            perturbed_histogram_release(&mut rng, &data, &cols, rule, args.m, &mut ledger)?
        }
        SynthMethod::SmoothHist => {
            smoothed_histogram_release(&mut rng, &data, &cols, rule, &mut ledger)?
        }
        SynthMethod::Md => md_release(&mut rng, &data, &cols, args.m, &mut ledger)?,
        SynthMethod::Bbmr => bbmr_release(&mut rng, &data, cols[0], &mut ledger)?,
        SynthMethod::ModipsBernoulli => modips(
            &rng,
            &data,
            &BernoulliModel::new(cols[0]),
            &mut ledger,
            args,
        )?,
        SynthMethod::ModipsNormal => {
            modips(&rng, &data, &NormalModel::new(cols[0]), &mut ledger, args)?
        }
        SynthMethod::ModipsMixture => {
            let cat = names(&data, Some(true));
            let mut cont = Vec::new();
            let mut bounds = Vec::new();
            for (_, c) in data.schema().continuous_columns() {
                if let ColumnSpec::Continuous { name, lo, hi } = c {
                    cont.push(name.clone());
                    bounds.push((*lo, *hi));
                }
            }
            let cells: usize = data
                .schema()
                .categorical_columns()
                .map(|(_, c)| match c {
                    ColumnSpec::Categorical { levels, .. } => levels.len(),
                    ColumnSpec::Continuous { .. } => 1,
                })
                .product();
            let model = GaussianMixtureModel::new(cat, cont, vec![bounds; cells]);
            modips(&rng, &data, &model, &mut ledger, args)?
        }
        SynthMethod::ModipsLogistic => {
            let model =
                SequentialLogisticModel::new(names(&data, Some(false)), names(&data, Some(true)));
            modips(&rng, &data, &model, &mut ledger, args)?
        }
    };
    if ledger.exact_share_spent() != Some(Share::from_integer(1)) {
        return Err(Failure::Budget(format!(
            "budget violation: ledger spent {:?} of the budget",
            ledger.exact_share_spent()
        )));
    }
    release.write_dir(&args.out)?;
    println!(
        "wrote {} set(s) of {} rows to {} (eps = {})",
        release.m(),
        data.n_rows(),
        args.out.display(),
        args.eps
    );
    Ok(())
}

fn bench_config(args: &BenchArgs) -> Result<StudyConfig, Failure> {
    let mut cfg = match &args.config {
        Some(p) => {
            let cfg = StudyConfig::from_json(read_file(p)?.as_bytes())?;
            if cfg.study != args.study {
                return Err(Failure::Config(format!(
                    "configuration error: config is for {} but --study is {}",
                    cfg.study.tag(),
                    args.study.tag()
                )));
            }
            cfg
        }
        None => StudyConfig::desk_default(args.study),
    };
    if let Some(r) = args.reps {
        cfg.reps = r;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn summarize(report: &StudyReport) {
    let first = report.metrics.first().map(|r| r.parameter.clone());
    println!(
        "{:<12} {:>10} {:>10} {:>10} {:>9} {:>8}",
        "method", "eps", "bias", "rmse", "coverage", "usable"
    );
    for r in report
        .metrics
        .iter()
        .filter(|r| Some(&r.parameter) == first.as_ref())
    {
        println!(
            "{:<12} {:>10.4e} {:>10.4} {:>10.4} {:>9.3} {:>8.3}",
            r.method.tag(),
            r.eps,
            r.bias,
            r.rmse,
            r.coverage,
            r.usable_fraction
        );
    }
    println!(
        "budget audit: {} releases, {} violations; {} failed replication(s)",
        report.audit.releases_checked, report.audit.violations, report.failure_count
    );
}

fn bench(args: &BenchArgs) -> Result<(), Failure> {
    let cfg = bench_config(args)?;
    let exec = if args.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    let report = run_study_with(&cfg, exec)?;
    let index = write_report(&args.out, &report)?;
    if let Some(first) = report.metrics.first() {
        println!(
            "{} ({}; parameter {})",
            cfg.study.tag(),
            index.metrics_file,
            first.parameter
        );
    }
    summarize(&report);
    if report.audit.violations > 0 {
        return Err(Failure::Budget(format!(
            "budget violation: {} release(s) did not spend exactly their budget",
            report.audit.violations
        )));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Bench(a) => bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
