//! Subcommands. Each takes its parsed arguments and writes its output files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use twophase::design::{
    case_control_plan, draw_indicators, estimate_pi, proposed_plan, random_plan, testlocal_plan,
};
use twophase::estimators::{fit, SecondPhaseData};
use twophase::inference::{score_test, wald_test};
use twophase::simharness::{run_mc, Intercept, MomentMode, RunResult, SummaryTable};
use twophase::{
    DesignConfig, ErrorMetric, EstimatorKind, PredictorKind, ScenarioConfig, SchemeKind, SelectionIndicators,
    Setting, TestResult,
};

use crate::error::{CliError, CliResult};
use crate::formats::{self, fmt_f64};

#[derive(Debug, Parser)]
#[command(name = "twophase", version, about = "Optimal second-phase sampling for two-phase case-control studies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute second-phase selection probabilities for a cohort.
    Design(DesignArgs),
    /// Draw the second-phase indicators from a plan.
    Select(SelectArgs),
    /// Fit the estimators and Wald tests on a second-phase sample.
    Estimate(EstimateArgs),
    /// Run a Monte Carlo scenario and write summary tables.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct DesignArgs {
    /// Cohort CSV with header id,y,z1,...,zd.
    #[arg(long)]
    pub cohort: PathBuf,
    /// Moment model JSON (required for the proposed and testlocal schemes).
    #[arg(long)]
    pub moments: Option<PathBuf>,
    /// Expected second-phase fraction N/n.
    #[arg(long, conflicts_with = "n_phase2", required_unless_present = "n_phase2")]
    pub fraction: Option<f64>,
    /// Second-phase size N.
    #[arg(long = "N")]
    pub n_phase2: Option<usize>,
    #[arg(long, default_value = "proposed")]
    pub scheme: SchemeKind,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Stopping tolerance of the fixed-point iteration.
    #[arg(long, default_value_t = DesignConfig::default().alpha)]
    pub alpha: f64,
    /// Iteration cap of the fixed-point iteration.
    #[arg(long, default_value_t = DesignConfig::default().n_iter)]
    pub max_iter: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long)]
    pub plan: PathBuf,
    #[arg(long)]
    pub cohort: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub cohort: PathBuf,
    /// Indicator CSV id,delta.
    #[arg(long)]
    pub delta: PathBuf,
    /// Predictor CSV id,x for the selected subjects.
    #[arg(long)]
    pub x: PathBuf,
    #[arg(long)]
    pub plan: PathBuf,
    /// Estimators to fit; all four when omitted.
    #[arg(long = "estimator", value_delimiter = ',')]
    pub estimators: Vec<EstimatorKind>,
    /// Moment model JSON; when given, the efficient score test is reported too.
    #[arg(long)]
    pub moments: Option<PathBuf>,
    /// Predictor type. Defaults to the moment model's, else binary when every
    /// observed value is 0 or 1.
    #[arg(long)]
    pub predictor: Option<PredictorArg>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum PredictorArg {
    Binary,
    Continuous,
}

impl From<PredictorArg> for PredictorKind {
    fn from(p: PredictorArg) -> Self {
        match p {
            PredictorArg::Binary => PredictorKind::Binary,
            PredictorArg::Continuous => PredictorKind::Continuous,
        }
    }
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct SimulateArgs {
    /// JSON file with any of the options below; flags take precedence.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Simulation setting, 1 or 2.
    #[arg(long)]
    pub setting: Option<Setting>,
    /// Cohort size.
    #[arg(long)]
    pub n: Option<usize>,
    /// Expected second-phase size.
    #[arg(long = "N")]
    #[serde(rename = "N")]
    pub n_phase2: Option<usize>,
    #[arg(long)]
    pub beta_x: Option<f64>,
    /// Target P(Y=1); the intercept is calibrated to it.
    #[arg(long, conflicts_with = "beta0")]
    pub event_rate: Option<f64>,
    /// Outcome intercept, instead of an event rate.
    #[arg(long)]
    pub beta0: Option<f64>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    #[serde(default)]
    pub schemes: Vec<SchemeKind>,
    /// Estimation error summary: mean-abs or rmse.
    #[arg(long)]
    pub metric: Option<ErrorMetric>,
    /// Fit the moment model on a pilot cohort of this size instead of using
    /// the true one.
    #[arg(long)]
    pub pilot: Option<usize>,
    /// Worker threads; the output does not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

fn plan_for(args: &DesignArgs, cohort: &twophase::Cohort) -> CliResult<(twophase::SamplingPlan, Option<Vec<f64>>)> {
    let n = cohort.n();
    let (fraction, total) = match (args.fraction, args.n_phase2) {
        (Some(f), _) => {
            if !(f > 0.0 && f <= 1.0) {
                return Err(CliError::Input(format!("--fraction must be in (0, 1], got {f}")));
            }
            (f, (f * n as f64).round() as usize)
        }
        (None, Some(total)) => {
            if total == 0 || total > n {
                return Err(CliError::Input(format!("--N must be in 1..={n}, got {total}")));
            }
            (total as f64 / n as f64, total)
        }
        (None, None) => return Err(CliError::Usage("give --fraction or --N".into())),
    };
    let cfg = DesignConfig {
        alpha: args.alpha,
        n_iter: args.max_iter,
        ..DesignConfig::default()
    };
    let moments = || -> CliResult<twophase::MomentModel> {
        let path = args
            .moments
            .as_ref()
            .ok_or_else(|| CliError::Input(format!("--moments is required for the {} scheme", args.scheme)))?;
        formats::read_moments(path)
    };
    Ok(match args.scheme {
        SchemeKind::Random => {
            let pi = estimate_pi(cohort).ok().map(|p| p.pi);
            (random_plan(cohort, fraction)?, pi)
        }
        SchemeKind::CaseControl => {
            let pi = estimate_pi(cohort)?;
            (case_control_plan(cohort, total.max(2), &pi)?, None)
        }
        SchemeKind::Proposed => {
            let m = moments()?;
            let pi = estimate_pi(cohort)?;
            (proposed_plan(cohort, &m, &pi, fraction, &cfg, args.seed)?, None)
        }
        SchemeKind::TestLocal => {
            let m = moments()?;
            let pi = estimate_pi(cohort)?;
            (testlocal_plan(cohort, &m, &pi, fraction, &cfg)?, None)
        }
    })
}

pub fn cmd_design(args: &DesignArgs) -> CliResult<()> {
    let cohort = formats::read_cohort(&args.cohort)?;
    let (plan, pi) = plan_for(args, &cohort)?;
    formats::write_plan(&args.out, &cohort, &plan, pi.as_deref())
}

pub fn cmd_select(args: &SelectArgs) -> CliResult<()> {
    let cohort = formats::read_cohort(&args.cohort)?;
    let plan = formats::read_plan(&args.plan, &cohort)?;
    let sel = draw_indicators(&plan, &cohort, args.seed)?;
    formats::write_delta(&args.out, &cohort, &sel.delta)
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct EstimateEntry {
    pub estimator: EstimatorKind,
    pub theta: Vec<f64>,
    pub se_beta: f64,
    pub wald_statistic: Option<f64>,
    pub p_value: Option<f64>,
    pub reject_at_05: Option<bool>,
    pub converged: bool,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct FailureEntry {
    /// Estimator or test that failed.
    pub method: String,
    pub error: String,
    pub message: String,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct Report {
    pub predictor: PredictorKind,
    pub n: usize,
    pub validation_count: usize,
    /// Names of the entries of `theta`: intercept, covariates, then x.
    pub coefficients: Vec<String>,
    pub estimates: Vec<EstimateEntry>,
    pub score_test: Option<TestResult>,
    pub failures: Vec<FailureEntry>,
}

fn failure(method: impl ToString, err: &twophase::Error) -> FailureEntry {
    FailureEntry {
        method: method.to_string(),
        error: err.name().to_string(),
        message: err.to_string(),
    }
}

pub fn cmd_estimate(args: &EstimateArgs) -> CliResult<()> {
    let cohort = formats::read_cohort(&args.cohort)?;
    let plan = formats::read_plan(&args.plan, &cohort)?;
    let delta = formats::read_delta(&args.delta, &cohort)?;
    let x = formats::read_x(&args.x, &cohort, &delta)?;
    let moments = args.moments.as_deref().map(formats::read_moments).transpose()?;
    let kind = match (args.predictor, &moments) {
        (Some(p), _) => p.into(),
        (None, Some(m)) => m.kind(),
        (None, None) if x.iter().flatten().all(|v| *v == 0.0 || *v == 1.0) => PredictorKind::Binary,
        (None, None) => PredictorKind::Continuous,
    };
    let sel = SelectionIndicators::from_delta(delta, 0);
    let data = SecondPhaseData::new(&cohort, &plan, &sel, &x, kind)?;

    let estimators = if args.estimators.is_empty() {
        EstimatorKind::ALL.to_vec()
    } else {
        args.estimators.clone()
    };
    let mut estimates = Vec::new();
    let mut failures = Vec::new();
    let mut first_error = None;
    let mut note = |f: FailureEntry, e: twophase::Error, first: &mut Option<twophase::Error>| {
        failures.push(f);
        first.get_or_insert(e);
    };
    for kind in estimators {
        match fit(kind, &data) {
            Ok(est) => {
                let wald = wald_test(&est);
                if let Err(e) = &wald {
                    note(failure(twophase::TestMethod::wald(kind), e), e.clone(), &mut first_error);
                }
                let wald = wald.ok();
                estimates.push(EstimateEntry {
                    estimator: kind,
                    theta: est.theta.theta.clone(),
                    se_beta: est.se_beta,
                    wald_statistic: wald.map(|w| w.statistic),
                    p_value: wald.map(|w| w.p_value),
                    reject_at_05: wald.map(|w| w.reject_at_05),
                    converged: est.converged,
                });
            }
            Err(e) => note(failure(kind, &e), e, &mut first_error),
        }
    }
    let score = match &moments {
        Some(m) => match score_test(&data, m) {
            Ok(t) => Some(t),
            Err(e) if e.is_input_error() => return Err(e.into()),
            Err(e) => {
                note(failure(twophase::TestMethod::Score, &e), e, &mut first_error);
                None
            }
        },
        None => None,
    };
    let mut coefficients = vec!["intercept".to_string()];
    coefficients.extend((1..=cohort.dim()).map(|k| format!("z{k}")));
    coefficients.push("x".into());
    let report = Report {
        predictor: kind,
        n: data.n(),
        validation_count: data.validation_count(),
        coefficients,
        estimates,
        score_test: score,
        failures,
    };
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    formats::write_text(&args.out, &(json + "\n"))?;
    match first_error {
        Some(e) => Err(CliError::Numeric(e)),
        None => Ok(()),
    }
}

fn load_simulate_config(args: &SimulateArgs) -> CliResult<SimulateArgs> {
    let Some(path) = &args.config else {
        return Ok(args.clone());
    };
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let file: SimulateArgs = serde_json::from_str(&text).map_err(|e| CliError::io(path, e))?;
    let event_rate = args.event_rate.or(if args.beta0.is_some() { None } else { file.event_rate });
    let beta0 = args.beta0.or(if args.event_rate.is_some() { None } else { file.beta0 });
    Ok(SimulateArgs {
        config: None,
        setting: args.setting.or(file.setting),
        n: args.n.or(file.n),
        n_phase2: args.n_phase2.or(file.n_phase2),
        beta_x: args.beta_x.or(file.beta_x),
        event_rate,
        beta0,
        runs: args.runs.or(file.runs),
        seed: args.seed.or(file.seed),
        schemes: if args.schemes.is_empty() { file.schemes } else { args.schemes.clone() },
        metric: args.metric.or(file.metric),
        pilot: args.pilot.or(file.pilot),
        threads: args.threads.or(file.threads),
        out: args.out.clone(),
    })
}

/// Resolve flags and config file into a validated scenario.
pub fn scenario(args: &SimulateArgs) -> CliResult<(ScenarioConfig, ErrorMetric)> {
    let a = load_simulate_config(args)?;
    let setting = a.setting.unwrap_or(Setting::One);
    let n_phase2 = a.n_phase2.ok_or_else(|| CliError::Input("--N is required".into()))?;
    let mut config = ScenarioConfig::new(setting, n_phase2);
    if let Some(n) = a.n {
        config.n = n;
    }
    if let Some(b) = a.beta_x {
        config.beta_x = b;
    }
    config.intercept = match (a.event_rate, a.beta0) {
        (Some(_), Some(_)) => return Err(CliError::Input("give either an event rate or beta0, not both".into())),
        (Some(r), None) => Intercept::EventRate(r),
        (None, Some(b)) => Intercept::Beta0(b),
        (None, None) => config.intercept,
    };
    if let Some(r) = a.runs {
        config.n_runs = r;
    }
    if let Some(s) = a.seed {
        config.base_seed = s;
    }
    if !a.schemes.is_empty() {
        config.schemes = a.schemes.clone();
    }
    if let Some(p) = a.pilot {
        config.moments = MomentMode::Pilot(p);
    }
    config.threads = a.threads;
    config.validate().map_err(CliError::Numeric)?;
    Ok((config, a.metric.unwrap_or_default()))
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    config: &'a ScenarioConfig,
    beta_0: f64,
    summary: &'a SummaryTable,
}

fn summary_csv(table: &SummaryTable) -> String {
    let mut s = String::from("table,scheme,column,value,display,failures\n");
    for c in &table.estimation {
        writeln!(
            s,
            "estimation,{},{},{},{},{}",
            c.scheme,
            c.estimator,
            c.value.map(fmt_f64).unwrap_or_default(),
            SummaryTable::render(c),
            c.failures
        )
        .unwrap();
    }
    for c in &table.testing {
        writeln!(
            s,
            "rejection,{},{},{},{:.3},{}",
            c.scheme,
            c.method,
            fmt_f64(c.rejection_rate),
            c.rejection_rate,
            c.failures
        )
        .unwrap();
    }
    s
}

fn runs_csv(runs: &[RunResult]) -> String {
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    let mut s = String::from("run,seed,scheme,n_phase2,kind,method,beta_hat,se,statistic,p_value,reject,failure\n");
    for r in runs {
        let size = |scheme: SchemeKind| {
            r.subsample_sizes
                .iter()
                .find(|(k, _)| *k == scheme)
                .and_then(|(_, n)| n.map(|n| n.to_string()))
                .unwrap_or_default()
        };
        for e in &r.estimates {
            writeln!(
                s,
                "{},{},{},{},estimate,{},{},{},,,,{}",
                r.run_id,
                r.seed,
                e.scheme,
                size(e.scheme),
                e.estimator,
                opt(e.beta_hat),
                opt(e.se),
                e.failure.as_deref().unwrap_or("")
            )
            .unwrap();
        }
        for t in &r.tests {
            writeln!(
                s,
                "{},{},{},{},test,{},,,{},{},{},{}",
                r.run_id,
                r.seed,
                t.scheme,
                size(t.scheme),
                t.method,
                opt(t.statistic),
                opt(t.p_value),
                u8::from(t.reject),
                t.failure.as_deref().unwrap_or("")
            )
            .unwrap();
        }
    }
    s
}

/// Run the scenario and write `summary.csv`, `summary.json` and `runs.csv`
/// into the output directory. Returns the summary.
pub fn cmd_simulate(args: &SimulateArgs) -> CliResult<SummaryTable> {
    let (config, metric) = scenario(args)?;
    let (runs, table) = run_mc(&config, metric)?;
    let beta_0 = config.params()?.beta_0;
    // The thread count is an execution detail and stays out of the outputs.
    let recorded = ScenarioConfig {
        threads: None,
        ..config
    };
    let json = serde_json::to_string_pretty(&SummaryFile {
        config: &recorded,
        beta_0,
        summary: &table,
    })
    .expect("summary serializes");
    let dir: &Path = &args.out;
    formats::write_text(&dir.join("summary.json"), &(json + "\n"))?;
    formats::write_text(&dir.join("summary.csv"), &summary_csv(&table))?;
    formats::write_text(&dir.join("runs.csv"), &runs_csv(&runs))?;
    Ok(table)
}

pub fn dispatch(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Design(a) => cmd_design(a),
        Command::Select(a) => cmd_select(a),
        Command::Estimate(a) => cmd_estimate(a),
        Command::Simulate(a) => cmd_simulate(a).map(|_| ()),
    }
}
