//! Monte Carlo replication of the two simulation settings: data generation,
//! the four sampling plans, selection, the four estimators and the five tests,
//! aggregated into error and rejection-rate tables.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, PhaseOneRecord};
use crate::design::{
    case_control_plan, draw_indicators_lane, estimate_pi, proposed_plan, random_plan, testlocal_plan,
    DesignConfig, PiEstimate, SamplingPlan, SchemeKind,
};
use crate::error::{Error, Result};
use crate::estimators::{fit, EstimatorKind, SecondPhaseData};
use crate::inference::{score_test, wald_test, TestMethod};
use crate::logistic::logistic;
use crate::moments::{MomentModel, PredictorKind};
use crate::streams::{substream, Stream};

/// Calibration cohort size and seed.
pub const CALIBRATION_DRAWS: usize = 200_000;
pub const CALIBRATION_SEED: u64 = 20_240_229;
/// Mean errors above this are reported as capped.
pub const CAP: f64 = 10.0;
/// Error charged to a failed fit when deciding whether a cell is capped. A
/// failed fit has no finite estimate; most failures are separations, where
/// some coefficient has already passed the solver's divergence bound.
pub const FAILED_RUN_ERROR: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Setting {
    One,
    Two,
}

impl Setting {
    pub fn default_beta_x(self) -> f64 {
        match self {
            Setting::One => 2.0,
            Setting::Two => 1.0,
        }
    }

    pub fn default_event_rate(self) -> f64 {
        match self {
            Setting::One => 0.10,
            Setting::Two => 0.15,
        }
    }
}

impl FromStr for Setting {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" | "one" | "One" => Ok(Setting::One),
            "2" | "two" | "Two" => Ok(Setting::Two),
            other => Err(Error::InvalidInput(format!("unknown setting '{other}'"))),
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Setting::One => "1",
            Setting::Two => "2",
        })
    }
}

/// Coefficients of the data-generating models. Both settings share them; they
/// differ only in `β_X` and the event rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    /// Logistic model for `X` over `(1, Z₁, …, Z₆)`.
    pub x_coef: Vec<f64>,
    /// Outcome coefficients on `Z₁, …, Z₆`.
    pub y_coef_z: Vec<f64>,
    pub beta_0: f64,
    pub beta_x: f64,
}

impl GeneratorParams {
    pub fn standard(beta_0: f64, beta_x: f64) -> Self {
        Self {
            x_coef: vec![-1.0, 0.5, 0.5, 1.0, 2.0, -3.0, -2.0],
            y_coef_z: vec![0.5, 0.5, 0.0, 0.0, 0.0, 0.5],
            beta_0,
            beta_x,
        }
    }

    /// The exact conditional moments of `X` given `Z`.
    pub fn oracle_moments(&self) -> MomentModel<f64> {
        MomentModel::logistic(self.x_coef.clone())
    }

    fn p_x(&self, z: &[f64]) -> f64 {
        logistic(self.x_coef[0] + dot(&self.x_coef[1..], z))
    }

    fn y_index(&self, z: &[f64]) -> f64 {
        self.beta_0 + dot(&self.y_coef_z, z)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn draw_covariates<R: Rng>(rng: &mut R) -> [f64; 6] {
    let gamma = Gamma::new(0.5, 1.0).expect("valid gamma parameters");
    let bern = |rng: &mut R, p: f64| if rng.random::<f64>() < p { 1.0 } else { 0.0 };
    let z1 = bern(rng, 0.3);
    let z2 = rng.random::<f64>();
    let z3 = bern(rng, 0.7);
    let z4: f64 = StandardNormal.sample(rng);
    let z5: f64 = Exp1.sample(rng);
    let z6 = gamma.sample(rng);
    [z1, z2, z3, z4, z5, z6]
}

/// A simulated cohort with its hidden predictor.
#[derive(Debug, Clone)]
pub struct Simulated {
    pub cohort: Cohort<f64>,
    pub x: Vec<f64>,
    pub moments: MomentModel<f64>,
}

/// Generate a cohort of `n` subjects from `params` on the data stream of `seed`
/// (lane separates independent cohorts drawn under one seed).
pub fn generate(params: &GeneratorParams, n: usize, seed: u64, lane: u64) -> Result<Simulated> {
    if n == 0 {
        return Err(Error::InvalidInput("cohort size must be positive".into()));
    }
    let mut rng = substream(seed, Stream::DataGen, lane);
    let mut records = Vec::with_capacity(n);
    let mut x = Vec::with_capacity(n);
    for i in 0..n {
        let z = draw_covariates(&mut rng);
        let xi = if rng.random::<f64>() < params.p_x(&z) { 1.0 } else { 0.0 };
        let py = logistic(params.y_index(&z) + params.beta_x * xi);
        let y = u8::from(rng.random::<f64>() < py);
        records.push(PhaseOneRecord::new(i as u64 + 1, y, &z)?);
        x.push(xi);
    }
    Ok(Simulated {
        cohort: Cohort::new(records)?,
        x,
        moments: params.oracle_moments(),
    })
}

/// Setting 1 with an explicit intercept.
pub fn generate_setting1(n: usize, beta_0: f64, beta_x: f64, seed: u64) -> Result<Simulated> {
    generate(&GeneratorParams::standard(beta_0, beta_x), n, seed, 0)
}

/// Setting 2: event rate fixed at 15%.
pub fn generate_setting2(n: usize, beta_x: f64, seed: u64) -> Result<Simulated> {
    let template = GeneratorParams::standard(0.0, beta_x);
    let beta_0 = calibrate_intercept(Setting::Two.default_event_rate(), &template)?;
    generate(&GeneratorParams { beta_0, ..template }, n, seed, 0)
}

/// Intercept giving the requested `P(Y = 1)`.
///
/// The event rate is estimated on a fixed synthetic cohort by averaging the
/// model probabilities, with `X` integrated out exactly; the estimate is then
/// smooth and increasing in `β₀`, so bisection converges to its root.
pub fn calibrate_intercept(target: f64, params: &GeneratorParams) -> Result<f64> {
    if !(target > 0.0 && target < 0.5) {
        return Err(Error::InvalidInput(format!("event rate {target} outside (0, 0.5)")));
    }
    let mut rng = substream(CALIBRATION_SEED, Stream::Calibration, 0);
    let draws: Vec<(f64, f64)> = (0..CALIBRATION_DRAWS)
        .map(|_| {
            let z = draw_covariates(&mut rng);
            (dot(&params.y_coef_z, &z), params.p_x(&z))
        })
        .collect();
    let rate = |b0: f64| {
        draws
            .iter()
            .map(|(lin, px)| px * logistic(b0 + lin + params.beta_x) + (1.0 - px) * logistic(b0 + lin))
            .sum::<f64>()
            / draws.len() as f64
    };
    let (mut lo, mut hi) = (-60.0, 60.0);
    if !(rate(lo) < target && rate(hi) > target) {
        return Err(Error::BracketFailure { target });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if rate(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// How the conditional moments of `X` are supplied to the design and tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MomentMode {
    Oracle,
    /// Fit on an independent fully observed pilot cohort of this size.
    Pilot(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Intercept {
    EventRate(f64),
    Beta0(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub setting: Setting,
    pub n: usize,
    /// Expected second-phase size.
    pub n_phase2: usize,
    pub beta_x: f64,
    pub intercept: Intercept,
    pub n_runs: usize,
    pub base_seed: u64,
    pub schemes: Vec<SchemeKind>,
    pub moments: MomentMode,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl ScenarioConfig {
    pub fn new(setting: Setting, n_phase2: usize) -> Self {
        Self {
            setting,
            n: 400,
            n_phase2,
            beta_x: setting.default_beta_x(),
            intercept: Intercept::EventRate(setting.default_event_rate()),
            n_runs: 50,
            base_seed: 1,
            schemes: SchemeKind::ALL.to_vec(),
            moments: MomentMode::Oracle,
            threads: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.n_phase2 == 0 || self.n_phase2 > self.n {
            return Err(Error::InvalidInput(format!(
                "need 0 < N <= n, got N = {} and n = {}",
                self.n_phase2, self.n
            )));
        }
        if self.n_runs == 0 {
            return Err(Error::InvalidInput("at least one run is required".into()));
        }
        if self.schemes.is_empty() {
            return Err(Error::InvalidInput("no sampling schemes requested".into()));
        }
        if !self.beta_x.is_finite() {
            return Err(Error::InvalidInput("beta_x must be finite".into()));
        }
        match self.intercept {
            Intercept::EventRate(r) if !(r > 0.0 && r < 0.5) => {
                Err(Error::InvalidInput(format!("event rate {r} outside (0, 0.5)")))
            }
            Intercept::Beta0(b) if !b.is_finite() => Err(Error::InvalidInput("beta_0 must be finite".into())),
            _ => Ok(()),
        }?;
        if let MomentMode::Pilot(size) = self.moments {
            if size < 20 {
                return Err(Error::InvalidInput("pilot cohort needs at least 20 subjects".into()));
            }
        }
        if self.threads == Some(0) {
            return Err(Error::InvalidInput("thread count must be positive".into()));
        }
        Ok(())
    }

    pub fn params(&self) -> Result<GeneratorParams> {
        let template = GeneratorParams::standard(0.0, self.beta_x);
        let beta_0 = match self.intercept {
            Intercept::Beta0(b) => b,
            Intercept::EventRate(r) => calibrate_intercept(r, &template)?,
        };
        Ok(GeneratorParams { beta_0, ..template })
    }

    pub fn fraction(&self) -> f64 {
        self.n_phase2 as f64 / self.n as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateOutcome {
    pub scheme: SchemeKind,
    pub estimator: EstimatorKind,
    pub beta_hat: Option<f64>,
    pub se: Option<f64>,
    /// `(β̂ − β_X)²`
    pub sq_error: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub scheme: SchemeKind,
    pub method: TestMethod,
    pub statistic: Option<f64>,
    pub p_value: Option<f64>,
    /// Failed tests do not reject.
    pub reject: bool,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run_id: usize,
    pub seed: u64,
    pub estimates: Vec<EstimateOutcome>,
    pub tests: Vec<TestOutcome>,
    /// Realized second-phase size per scheme (`None` when the plan failed).
    pub subsample_sizes: Vec<(SchemeKind, Option<usize>)>,
}

fn plan_for(
    scheme: SchemeKind,
    sim: &Simulated,
    moments: &MomentModel<f64>,
    pi: &PiEstimate<f64>,
    config: &ScenarioConfig,
    seed: u64,
) -> Result<SamplingPlan<f64>> {
    let cfg = DesignConfig::default();
    let frac = config.fraction();
    match scheme {
        SchemeKind::Proposed => proposed_plan(&sim.cohort, moments, pi, frac, &cfg, seed),
        SchemeKind::TestLocal => testlocal_plan(&sim.cohort, moments, pi, frac, &cfg),
        SchemeKind::Random => random_plan(&sim.cohort, frac),
        SchemeKind::CaseControl => case_control_plan(&sim.cohort, config.n_phase2, pi),
    }
}

fn failed_scheme(scheme: SchemeKind, err: &Error) -> (Vec<EstimateOutcome>, Vec<TestOutcome>) {
    let name = err.name().to_string();
    let est = EstimatorKind::ALL
        .iter()
        .map(|&estimator| EstimateOutcome {
            scheme,
            estimator,
            beta_hat: None,
            se: None,
            sq_error: None,
            failure: Some(name.clone()),
        })
        .collect();
    let tests = TestMethod::ALL
        .iter()
        .map(|&method| TestOutcome {
            scheme,
            method,
            statistic: None,
            p_value: None,
            reject: false,
            failure: Some(name.clone()),
        })
        .collect();
    (est, tests)
}

/// One replication: generate data, then plan, select, estimate and test under
/// every configured scheme.
pub fn run_once(config: &ScenarioConfig, params: &GeneratorParams, run_id: usize) -> Result<RunResult> {
    let seed = config.base_seed.wrapping_add(run_id as u64);
    let sim = generate(params, config.n, seed, 0)?;
    let moments = match config.moments {
        MomentMode::Oracle => sim.moments.clone(),
        MomentMode::Pilot(size) => {
            let pilot = generate(params, size, seed, 1)?;
            MomentModel::fit_pilot(PredictorKind::Binary, &pilot.cohort, &pilot.x)?
        }
    };
    let mut result = RunResult {
        run_id,
        seed,
        estimates: Vec::new(),
        tests: Vec::new(),
        subsample_sizes: Vec::new(),
    };
    let pi = match estimate_pi(&sim.cohort) {
        Ok(pi) => pi,
        Err(e) => {
            for &scheme in &config.schemes {
                let (est, tests) = failed_scheme(scheme, &e);
                result.estimates.extend(est);
                result.tests.extend(tests);
                result.subsample_sizes.push((scheme, None));
            }
            return Ok(result);
        }
    };
    for &scheme in &config.schemes {
        let lane = SchemeKind::ALL.iter().position(|s| *s == scheme).unwrap_or(0) as u64;
        let data = plan_for(scheme, &sim, &moments, &pi, config, seed).and_then(|plan| {
            let sel = draw_indicators_lane(&plan, &sim.cohort, seed, lane)?;
            SecondPhaseData::reveal(&sim.cohort, &plan, &sel, &sim.x, PredictorKind::Binary)
        });
        let data = match data {
            Ok(d) => d,
            Err(e) => {
                let (est, tests) = failed_scheme(scheme, &e);
                result.estimates.extend(est);
                result.tests.extend(tests);
                result.subsample_sizes.push((scheme, None));
                continue;
            }
        };
        result.subsample_sizes.push((scheme, Some(data.validation_count())));
        result
            .tests
            .push(test_outcome(scheme, TestMethod::Score, score_test(&data, &moments)));
        for estimator in EstimatorKind::ALL {
            let fitted = fit(estimator, &data);
            let (beta_hat, se, failure) = match &fitted {
                Ok(est) if est.beta().is_finite() => (Some(est.beta()), Some(est.se_beta), None),
                Ok(_) => (None, None, Some("NonFinite".to_string())),
                Err(e) => (None, None, Some(e.name().to_string())),
            };
            result.estimates.push(EstimateOutcome {
                scheme,
                estimator,
                beta_hat,
                se,
                sq_error: beta_hat.map(|b| (b - config.beta_x).powi(2)),
                failure,
            });
            let wald = fitted.and_then(|est| wald_test(&est));
            result.tests.push(test_outcome(scheme, TestMethod::wald(estimator), wald));
        }
    }
    Ok(result)
}

fn test_outcome(scheme: SchemeKind, method: TestMethod, res: Result<crate::inference::TestResult>) -> TestOutcome {
    match res {
        Ok(t) => TestOutcome {
            scheme,
            method,
            statistic: Some(t.statistic),
            p_value: Some(t.p_value),
            reject: t.reject_at_05,
            failure: None,
        },
        Err(e) => TestOutcome {
            scheme,
            method,
            statistic: None,
            p_value: None,
            reject: false,
            failure: Some(e.name().to_string()),
        },
    }
}

/// All replications of a scenario plus their summary. Runs execute in
/// parallel but are collected in run order, so the output does not depend on
/// the thread count.
pub fn run_mc(config: &ScenarioConfig, metric: ErrorMetric) -> Result<(Vec<RunResult>, SummaryTable)> {
    config.validate()?;
    let params = config.params()?;
    let work = || {
        (0..config.n_runs)
            .into_par_iter()
            .map(|r| run_once(config, &params, r))
            .collect::<Result<Vec<_>>>()
    };
    let results = match config.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::InvalidInput(format!("cannot start worker pool: {e}")))?
            .install(work),
        None => work(),
    }?;
    let summary = summarize(&results, metric)?;
    Ok((results, summary))
}

/// How per-run errors are averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorMetric {
    /// Mean over runs of `|β̂ − β_X|`.
    #[default]
    MeanAbs,
    /// `√(mean over runs of (β̂ − β_X)²)`.
    Rmse,
}

impl FromStr for ErrorMetric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean-abs" => Ok(ErrorMetric::MeanAbs),
            "rmse" => Ok(ErrorMetric::Rmse),
            other => Err(Error::InvalidInput(format!("unknown error metric '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationCell {
    pub scheme: SchemeKind,
    pub estimator: EstimatorKind,
    /// Average error over the runs that produced an estimate.
    pub value: Option<f64>,
    /// Shown as ">10": the average exceeds [`CAP`] once every failed run is
    /// charged [`FAILED_RUN_ERROR`].
    pub capped: bool,
    pub runs_used: usize,
    pub failures: usize,
    pub max_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCell {
    pub scheme: SchemeKind,
    pub method: TestMethod,
    pub rejection_rate: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub metric: ErrorMetric,
    pub n_runs: usize,
    pub estimation: Vec<EstimationCell>,
    pub testing: Vec<TestCell>,
    /// Mean realized second-phase size per scheme.
    pub mean_subsample: Vec<(SchemeKind, f64)>,
}

impl SummaryTable {
    pub fn estimation_cell(&self, scheme: SchemeKind, estimator: EstimatorKind) -> Option<&EstimationCell> {
        self.estimation
            .iter()
            .find(|c| c.scheme == scheme && c.estimator == estimator)
    }

    pub fn test_cell(&self, scheme: SchemeKind, method: TestMethod) -> Option<&TestCell> {
        self.testing.iter().find(|c| c.scheme == scheme && c.method == method)
    }

    /// Cell value as printed in the tables.
    pub fn render(cell: &EstimationCell) -> String {
        match (cell.capped, cell.value) {
            (true, _) => format!(">{CAP}"),
            (false, Some(v)) => format!("{v:.3}"),
            (false, None) => "NA".into(),
        }
    }
}

/// Aggregate run results into the error and rejection-rate tables.
pub fn summarize(results: &[RunResult], metric: ErrorMetric) -> Result<SummaryTable> {
    if results.is_empty() {
        return Err(Error::InvalidInput("no runs to summarize".into()));
    }
    let mut schemes: Vec<SchemeKind> = Vec::new();
    for r in results {
        for (s, _) in &r.subsample_sizes {
            if !schemes.contains(s) {
                schemes.push(*s);
            }
        }
    }
    schemes.sort_by_key(|s| SchemeKind::ALL.iter().position(|k| k == s));

    let mut estimation = Vec::new();
    let mut testing = Vec::new();
    let mut mean_subsample = Vec::new();
    for &scheme in &schemes {
        for estimator in EstimatorKind::ALL {
            let outcomes: Vec<&EstimateOutcome> = results
                .iter()
                .flat_map(|r| &r.estimates)
                .filter(|o| o.scheme == scheme && o.estimator == estimator)
                .collect();
            let sq: Vec<f64> = outcomes.iter().filter_map(|o| o.sq_error).collect();
            let failures = outcomes.len() - sq.len();
            let value = (!sq.is_empty()).then(|| match metric {
                ErrorMetric::MeanAbs => sq.iter().map(|e| e.sqrt()).sum::<f64>() / sq.len() as f64,
                ErrorMetric::Rmse => (sq.iter().sum::<f64>() / sq.len() as f64).sqrt(),
            });
            let max_error = sq.iter().map(|e| e.sqrt()).fold(None, |m: Option<f64>, e| {
                Some(m.map_or(e, |m| m.max(e)))
            });
            let charged = match metric {
                ErrorMetric::MeanAbs => {
                    (sq.iter().map(|e| e.sqrt()).sum::<f64>() + FAILED_RUN_ERROR * failures as f64)
                        / outcomes.len().max(1) as f64
                }
                ErrorMetric::Rmse => ((sq.iter().sum::<f64>()
                    + FAILED_RUN_ERROR * FAILED_RUN_ERROR * failures as f64)
                    / outcomes.len().max(1) as f64)
                    .sqrt(),
            };
            let capped = value.is_none() || !(charged <= CAP);
            estimation.push(EstimationCell {
                scheme,
                estimator,
                value,
                capped,
                runs_used: sq.len(),
                failures,
                max_error,
            });
        }
        for method in TestMethod::ALL {
            let outcomes: Vec<&TestOutcome> = results
                .iter()
                .flat_map(|r| &r.tests)
                .filter(|o| o.scheme == scheme && o.method == method)
                .collect();
            let rejections = outcomes.iter().filter(|o| o.reject).count();
            testing.push(TestCell {
                scheme,
                method,
                rejection_rate: if outcomes.is_empty() {
                    0.0
                } else {
                    rejections as f64 / outcomes.len() as f64
                },
                failures: outcomes.iter().filter(|o| o.failure.is_some()).count(),
            });
        }
        let sizes: Vec<usize> = results
            .iter()
            .flat_map(|r| &r.subsample_sizes)
            .filter(|(s, _)| *s == scheme)
            .filter_map(|(_, n)| *n)
            .collect();
        let mean = if sizes.is_empty() {
            0.0
        } else {
            sizes.iter().sum::<usize>() as f64 / sizes.len() as f64
        };
        mean_subsample.push((scheme, mean));
    }
    Ok(SummaryTable {
        metric,
        n_runs: results.len(),
        estimation,
        testing,
        mean_subsample,
    })
}
