//! Estimators of the predictor effect from second-phase data.
//!
//! All four estimators fit the logistic model `logit P(Y=1|X,Z) = z̃ᵀα + xβ`.
//! Coefficients are laid out as `(α₀, α_Z…, β)`, so the predictor effect is the
//! last entry.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cohort::{Coefficients, Cohort, PhaseOneRecord};
use crate::design::{DesignContext, PiEstimate, SamplingPlan, SelectionIndicators};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::logistic::{
    fit_logistic_from, fit_logistic_rows, logistic, logistic_information, logistic_score, logit,
    newton_iterate, newton_solve, NewtonStatus, SolverConfig,
};
use crate::moments::{ols, MomentModel, PredictorKind};
use crate::scalar::{dot, Scalar};

/// Floor substituted for zero selection probabilities inside log ratios.
pub const ETA_FLOOR: f64 = 0.01;
/// Ceiling for selection probabilities inside `log[(1−η₁)/(1−η₀)]`.
pub const ETA_CEIL: f64 = 0.99;

const OUTER_TOL: f64 = 1e-6;
const OUTER_MAX: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    Naive,
    Ipw,
    PclValidate,
    PclBoth,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 4] = [
        EstimatorKind::Naive,
        EstimatorKind::Ipw,
        EstimatorKind::PclBoth,
        EstimatorKind::PclValidate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorKind::Naive => "naive",
            EstimatorKind::Ipw => "ipw",
            EstimatorKind::PclValidate => "pcl-validate",
            EstimatorKind::PclBoth => "pcl-both",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "naive" => Ok(EstimatorKind::Naive),
            "ipw" => Ok(EstimatorKind::Ipw),
            "pcl-validate" | "pclvalidate" | "pclval" => Ok(EstimatorKind::PclValidate),
            "pcl-both" | "pclboth" => Ok(EstimatorKind::PclBoth),
            other => Err(Error::InvalidInput(format!("unknown estimator '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SecondPhaseRecord<T> {
    pub base: PhaseOneRecord<T>,
    pub delta: u8,
    pub x: Option<T>,
    pub eta1: T,
    pub eta0: T,
}

impl<T: Scalar> SecondPhaseRecord<T> {
    /// Selection probability given the observed outcome.
    pub fn eta_y(&self) -> T {
        if self.base.y == 1 {
            self.eta1
        } else {
            self.eta0
        }
    }
}

/// Cohort plus the outcome of second-phase selection.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondPhaseData<T> {
    records: Vec<SecondPhaseRecord<T>>,
    kind: PredictorKind,
    plan: SamplingPlan<T>,
}

impl<T: Scalar> SecondPhaseData<T> {
    /// `x[i]` must be `Some` exactly for the selected records.
    pub fn new(
        cohort: &Cohort<T>,
        plan: &SamplingPlan<T>,
        selection: &SelectionIndicators,
        x: &[Option<T>],
        kind: PredictorKind,
    ) -> Result<Self> {
        let n = cohort.n();
        if plan.len() != n || selection.delta.len() != n || x.len() != n {
            return Err(Error::InvalidInput("second-phase inputs are not aligned with the cohort".into()));
        }
        let records = cohort
            .iter()
            .enumerate()
            .map(|(i, rec)| {
                let delta = selection.delta[i];
                match (delta, x[i]) {
                    (1, Some(v)) => {
                        if !v.is_finite() {
                            return Err(Error::InvalidInput(format!("x for id {} is not finite", rec.id)));
                        }
                        if kind == PredictorKind::Binary && v != T::zero() && v != T::one() {
                            return Err(Error::InvalidInput(format!("binary x for id {} is not 0/1", rec.id)));
                        }
                    }
                    (1, None) => {
                        return Err(Error::InvalidInput(format!("selected id {} has no x", rec.id)))
                    }
                    (0, None) => {}
                    (0, Some(_)) => {
                        return Err(Error::InvalidInput(format!("unselected id {} has x", rec.id)))
                    }
                    (d, _) => return Err(Error::InvalidInput(format!("delta {d} is not 0/1"))),
                }
                Ok(SecondPhaseRecord {
                    base: rec.clone(),
                    delta,
                    x: x[i],
                    eta1: plan.eta1[i],
                    eta0: plan.eta0[i],
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            records,
            kind,
            plan: plan.clone(),
        })
    }

    /// Reveal `x` on the selected records of a fully simulated predictor.
    pub fn reveal(
        cohort: &Cohort<T>,
        plan: &SamplingPlan<T>,
        selection: &SelectionIndicators,
        full_x: &[T],
        kind: PredictorKind,
    ) -> Result<Self> {
        let x: Vec<Option<T>> = selection
            .delta
            .iter()
            .zip(full_x)
            .map(|(d, v)| (*d == 1).then_some(*v))
            .collect();
        Self::new(cohort, plan, selection, &x, kind)
    }

    pub fn records(&self) -> &[SecondPhaseRecord<T>] {
        &self.records
    }

    pub fn kind(&self) -> PredictorKind {
        self.kind
    }

    pub fn plan(&self) -> &SamplingPlan<T> {
        &self.plan
    }

    pub fn n(&self) -> usize {
        self.records.len()
    }

    /// Number of raw covariates.
    pub fn dim(&self) -> usize {
        self.records[0].base.z.len() - 1
    }

    /// Position of β in the coefficient vector.
    pub fn beta_index(&self) -> usize {
        self.dim() + 1
    }

    pub fn validation(&self) -> impl Iterator<Item = &SecondPhaseRecord<T>> {
        self.records.iter().filter(|r| r.delta == 1)
    }

    pub fn non_validation(&self) -> impl Iterator<Item = &SecondPhaseRecord<T>> {
        self.records.iter().filter(|r| r.delta == 0)
    }

    pub fn validation_count(&self) -> usize {
        self.validation().count()
    }

    /// Validation design rows `(z̃, x)` and outcomes.
    fn validation_design(&self) -> (Vec<Vec<T>>, Vec<T>) {
        self.validation()
            .map(|r| {
                let mut row = r.base.z.augmented().to_vec();
                row.push(r.x.expect("validated"));
                (row, r.base.y_scalar())
            })
            .unzip()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Estimate<T> {
    pub kind: EstimatorKind,
    pub theta: Coefficients<T>,
    pub cov: Matrix<T>,
    pub se_beta: T,
    pub converged: bool,
}

impl<T: Scalar> Estimate<T> {
    pub fn beta(&self) -> T {
        self.theta.beta().expect("estimates always carry beta")
    }

    fn from_cov(kind: EstimatorKind, theta: Coefficients<T>, cov: Matrix<T>, converged: bool) -> Self {
        let b = theta.beta_index.expect("beta index");
        let se_beta = cov[(b, b)].max(T::zero()).sqrt();
        Self {
            kind,
            theta,
            cov,
            se_beta,
            converged,
        }
    }
}

fn clamp_floor<T: Scalar>(eta: T) -> T {
    if eta <= T::zero() {
        T::lit(ETA_FLOOR)
    } else {
        eta
    }
}

fn clamp_ceil<T: Scalar>(eta: T) -> T {
    eta.min(T::lit(ETA_CEIL))
}

/// `log(η₁/η₀)` with zero probabilities replaced by [`ETA_FLOOR`].
pub fn validation_offset<T: Scalar>(eta1: T, eta0: T) -> T {
    (clamp_floor(eta1) / clamp_floor(eta0)).ln()
}

/// `log[(1−η₁)/(1−η₀)]` with probabilities capped at [`ETA_CEIL`].
pub fn non_validation_offset<T: Scalar>(eta1: T, eta0: T) -> T {
    ((T::one() - clamp_ceil(eta1)) / (T::one() - clamp_ceil(eta0))).ln()
}

/// Complete-case logistic regression on the validation set.
pub fn naive_fit<T: Scalar>(data: &SecondPhaseData<T>) -> Result<Estimate<T>> {
    let (rows, y) = data.validation_design();
    let fit = fit_logistic_rows(&rows, &y, None, None, Some(data.beta_index()), &SolverConfig::default())?;
    Ok(Estimate::from_cov(EstimatorKind::Naive, fit.coefficients, fit.covariance, true))
}

/// Inverse-probability-weighted logistic regression with a sandwich covariance.
pub fn ipw_fit<T: Scalar>(data: &SecondPhaseData<T>) -> Result<Estimate<T>> {
    let (rows, y) = data.validation_design();
    let weights = data
        .validation()
        .map(|r| {
            let e = r.eta_y();
            if e > T::zero() {
                Ok(T::one() / e)
            } else {
                Err(Error::ZeroWeightProbability { id: r.base.id })
            }
        })
        .collect::<Result<Vec<T>>>()?;
    let fit = fit_logistic_rows(
        &rows,
        &y,
        None,
        Some(&weights),
        Some(data.beta_index()),
        &SolverConfig::default(),
    )?;
    let theta = &fit.coefficients.theta;
    let p = theta.len();
    let mut meat = Matrix::zeros(p, p);
    for ((row, yi), w) in rows.iter().zip(&y).zip(&weights) {
        let r = *w * (*yi - logistic(dot(row, theta)));
        meat.add_outer(r * r, row);
    }
    let bread = fit.covariance;
    let cov = bread.matmul(&meat).matmul(&bread);
    Ok(Estimate::from_cov(EstimatorKind::Ipw, fit.coefficients, cov, true))
}

/// Offsets `log(η₁/η₀)` for the validation records, in validation order.
fn validation_offsets<T: Scalar>(data: &SecondPhaseData<T>) -> Vec<T> {
    data.validation().map(|r| validation_offset(r.eta1, r.eta0)).collect()
}

/// Pseudo conditional likelihood estimator using the validation set only:
/// a logistic fit with per-record offset `log(η₁/η₀)`.
pub fn pcl_validate_fit<T: Scalar>(data: &SecondPhaseData<T>) -> Result<Estimate<T>> {
    let (rows, y) = data.validation_design();
    let offsets = validation_offsets(data);
    let cfg = SolverConfig::default();
    let start = match naive_fit(data) {
        Ok(est) => est.theta,
        Err(_) => Coefficients::zeros(data.dim() + 2, Some(data.beta_index())),
    };
    let fit = fit_logistic_from(&rows, &y, Some(&offsets), None, &start, &cfg)?;
    Ok(Estimate::from_cov(EstimatorKind::PclValidate, fit.coefficients, fit.covariance, true))
}

/// Left-hand side of the validation-only estimating equations at `theta`.
pub fn pcl_validate_residual<T: Scalar>(data: &SecondPhaseData<T>, theta: &[T]) -> Vec<T> {
    let (rows, y) = data.validation_design();
    let offsets = validation_offsets(data);
    logistic_score(&rows, &y, Some(&offsets), None, theta)
}

/// Regression of `X` on `(Z, I(Y=0))` over the validation set, used to
/// evaluate `R(Z) = log E[exp(βX) | Z, Y = 0]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RHatModel<T> {
    pub predictor_kind: PredictorKind,
    /// Coefficients on `(1, Z, I(Y=0))`.
    pub gamma_hat: Vec<T>,
    /// Residual variance, continuous predictors only (zero otherwise).
    pub sigma_x_sq_hat: T,
}

impl<T: Scalar> RHatModel<T> {
    pub fn fit(data: &SecondPhaseData<T>) -> Result<Self> {
        let (rows, x): (Vec<Vec<T>>, Vec<T>) = data
            .validation()
            .map(|r| {
                let mut row = r.base.z.augmented().to_vec();
                row.push(if r.base.y == 0 { T::one() } else { T::zero() });
                (row, r.x.expect("validated"))
            })
            .unzip();
        match data.kind() {
            PredictorKind::Continuous => {
                let (gamma_hat, sigma_x_sq_hat) = ols(&rows, &x)?;
                Ok(Self {
                    predictor_kind: PredictorKind::Continuous,
                    gamma_hat,
                    sigma_x_sq_hat,
                })
            }
            PredictorKind::Binary => {
                let gamma_hat = fit_auxiliary_logistic(&rows, &x)?;
                Ok(Self {
                    predictor_kind: PredictorKind::Binary,
                    gamma_hat,
                    sigma_x_sq_hat: T::zero(),
                })
            }
        }
    }

    /// Linear predictor of the auxiliary regression at `Y = 0`.
    fn index_at_control(&self, z_tilde: &[T]) -> T {
        let p = self.gamma_hat.len();
        dot(&self.gamma_hat[..p - 1], z_tilde) + self.gamma_hat[p - 1]
    }

    /// `R̂(z)` for a given `β`.
    pub fn r_at(&self, z_tilde: &[T], beta: T) -> T {
        let idx = self.index_at_control(z_tilde);
        match self.predictor_kind {
            PredictorKind::Continuous => beta * idx + beta * beta * self.sigma_x_sq_hat / T::lit(2.0),
            PredictorKind::Binary => binary_log_mgf(logistic(idx), beta),
        }
    }

    /// `∂R̂(z)/∂β`.
    pub fn dr_dbeta(&self, z_tilde: &[T], beta: T) -> T {
        let idx = self.index_at_control(z_tilde);
        match self.predictor_kind {
            PredictorKind::Continuous => idx + beta * self.sigma_x_sq_hat,
            PredictorKind::Binary => {
                let p = logistic(idx);
                // p e^β / (1 − p + p e^β), written as a logistic for stability
                logistic(logit_or_inf(p) + beta)
            }
        }
    }
}

fn logit_or_inf<T: Scalar>(p: T) -> T {
    if p <= T::zero() {
        T::neg_infinity()
    } else if p >= T::one() {
        T::infinity()
    } else {
        logit(p)
    }
}

/// `log(1 − p + p e^β)`
pub fn binary_log_mgf<T: Scalar>(p: T, beta: T) -> T {
    (T::one() - p + p * beta.exp()).ln()
}

/// Logistic fit for the auxiliary predictor model. Separation here only pushes
/// fitted probabilities towards 0 or 1, which `R̂` tolerates, so the last
/// Newton iterate is accepted instead of failing.
fn fit_auxiliary_logistic<T: Scalar>(rows: &[Vec<T>], x: &[T]) -> Result<Vec<T>> {
    let p = rows.first().map_or(0, Vec::len);
    let has1 = x.iter().any(|v| *v > T::lit(0.5));
    let has0 = x.iter().any(|v| *v <= T::lit(0.5));
    if !(has0 && has1) {
        // degenerate validation sample: the predictor never varies
        let mut gamma = vec![T::zero(); p];
        gamma[0] = if has1 { T::lit(40.0) } else { T::lit(-40.0) };
        return Ok(gamma);
    }
    let cfg = SolverConfig {
        divergence_cap: Some(T::lit(40.0)),
        max_iter: 50,
        ..SolverConfig::default()
    };
    let start = Coefficients::zeros(p, None);
    let res = newton_iterate(
        |t| Ok(logistic_score(rows, x, None, None, t)),
        |t| {
            let mut j = logistic_information(rows, None, None, t);
            j.scale(-T::one());
            Ok(j)
        },
        &start,
        &cfg,
    );
    match res {
        Ok((sol, status)) => {
            if status != NewtonStatus::Converged {
                log::debug!("auxiliary predictor regression stopped before convergence");
            }
            Ok(sol.coefficients.theta)
        }
        Err(Error::Separation) | Err(Error::SingularJacobian) => {
            // Rerun without the cap for the same number of steps and keep the
            // last iterate, as a plain IRLS loop would.
            let cfg = SolverConfig {
                divergence_cap: None,
                max_iter: 25,
                ..cfg
            };
            match newton_iterate(
                |t| Ok(logistic_score(rows, x, None, None, t)),
                |t| {
                    let mut j = logistic_information(rows, None, None, t);
                    j.scale(-T::one());
                    Ok(j)
                },
                &start,
                &cfg,
            ) {
                Ok((sol, _)) => Ok(sol.coefficients.theta),
                Err(Error::SingularJacobian) => Err(Error::SingularDesign),
                Err(e) => Err(e),
            }
        }
        Err(Error::SingularDesign) => Err(Error::SingularDesign),
        Err(e) => Err(e),
    }
}

/// Fit the auxiliary model and evaluate `R̂(Zᵢ)` at `β` for every record,
/// always with `I(Y=0) = 1`.
pub fn estimate_r<T: Scalar>(data: &SecondPhaseData<T>, beta: T) -> Result<(RHatModel<T>, Vec<T>)> {
    let model = RHatModel::fit(data)?;
    let values = data
        .records()
        .iter()
        .map(|r| model.r_at(r.base.z.augmented(), beta))
        .collect();
    Ok((model, values))
}

/// The stacked estimating equations of the estimator that also uses the
/// non-validation records.
struct PclBothSystem<'a, T> {
    data: &'a SecondPhaseData<T>,
    model: &'a RHatModel<T>,
    off_plus: Vec<T>,
    off_minus: Vec<T>,
}

impl<'a, T: Scalar> PclBothSystem<'a, T> {
    fn new(data: &'a SecondPhaseData<T>, model: &'a RHatModel<T>) -> Self {
        let off_plus = data.records().iter().map(|r| validation_offset(r.eta1, r.eta0)).collect();
        let off_minus = data
            .records()
            .iter()
            .map(|r| non_validation_offset(r.eta1, r.eta0))
            .collect();
        Self {
            data,
            model,
            off_plus,
            off_minus,
        }
    }

    /// Residual with `R̂` evaluated at `r_beta` (when `None`, at θ's own β).
    fn residual(&self, theta: &[T], r_beta: Option<T>) -> Vec<T> {
        let p = theta.len();
        let b = p - 1;
        let r_beta = r_beta.unwrap_or(theta[b]);
        let alpha = &theta[..b];
        let mut out = vec![T::zero(); p];
        for (i, rec) in self.data.records().iter().enumerate() {
            let zt = rec.base.z.augmented();
            let y = rec.base.y_scalar();
            if rec.delta == 1 {
                let x = rec.x.expect("validated");
                let u = dot(alpha, zt) + x * theta[b] + self.off_plus[i];
                let e = y - logistic(u);
                for (o, z) in out[..b].iter_mut().zip(zt) {
                    *o += e * *z;
                }
                out[b] += e * x;
            } else {
                let r = self.model.r_at(zt, r_beta);
                let u = dot(alpha, zt) + r + self.off_minus[i];
                let e = y - logistic(u);
                for (o, z) in out[..b].iter_mut().zip(zt) {
                    *o += e * *z;
                }
                out[b] += e * r;
            }
        }
        out
    }

    /// Jacobian of [`Self::residual`]. With `fixed_r` the dependence of `R̂`
    /// on β is ignored (the inner problem of the alternating scheme).
    fn jacobian(&self, theta: &[T], r_beta: Option<T>) -> Matrix<T> {
        let p = theta.len();
        let b = p - 1;
        let fixed = r_beta.is_some();
        let r_beta = r_beta.unwrap_or(theta[b]);
        let alpha = &theta[..b];
        let mut jac = Matrix::zeros(p, p);
        let mut row = vec![T::zero(); p];
        let mut grad = vec![T::zero(); p];
        for (i, rec) in self.data.records().iter().enumerate() {
            let zt = rec.base.z.augmented();
            row[..b].copy_from_slice(zt);
            grad[..b].copy_from_slice(zt);
            if rec.delta == 1 {
                let x = rec.x.expect("validated");
                row[b] = x;
                grad[b] = x;
                let h = logistic(dot(alpha, zt) + x * theta[b] + self.off_plus[i]);
                jac.add_outer2(-(h * (T::one() - h)), &row, &grad);
            } else {
                let r = self.model.r_at(zt, r_beta);
                let dr = if fixed {
                    T::zero()
                } else {
                    self.model.dr_dbeta(zt, r_beta)
                };
                row[b] = r;
                grad[b] = dr;
                let h = logistic(dot(alpha, zt) + r + self.off_minus[i]);
                jac.add_outer2(-(h * (T::one() - h)), &row, &grad);
                if !fixed {
                    let y = rec.base.y_scalar();
                    jac[(b, b)] += dr * (y - h);
                }
            }
        }
        jac
    }

    /// `Σ δ 𝒳𝒳ᵀ H₊(1−H₊) + Σ (1−δ) 𝒯𝒯ᵀ H₋(1−H₋)` at `theta`.
    fn information(&self, theta: &[T]) -> Matrix<T> {
        let p = theta.len();
        let b = p - 1;
        let alpha = &theta[..b];
        let mut info = Matrix::zeros(p, p);
        let mut row = vec![T::zero(); p];
        for (i, rec) in self.data.records().iter().enumerate() {
            let zt = rec.base.z.augmented();
            row[..b].copy_from_slice(zt);
            let h = if rec.delta == 1 {
                let x = rec.x.expect("validated");
                row[b] = x;
                logistic(dot(alpha, zt) + x * theta[b] + self.off_plus[i])
            } else {
                let r = self.model.r_at(zt, theta[b]);
                row[b] = r;
                logistic(dot(alpha, zt) + r + self.off_minus[i])
            };
            info.add_outer(h * (T::one() - h), &row);
        }
        info
    }
}

/// Stacked residual of the both-sets estimator at `theta`, with `R̂` refitted
/// from the validation set and evaluated at θ's β.
pub fn pcl_both_residual<T: Scalar>(data: &SecondPhaseData<T>, theta: &[T]) -> Result<Vec<T>> {
    let model = RHatModel::fit(data)?;
    Ok(PclBothSystem::new(data, &model).residual(theta, None))
}

/// Jacobian of [`pcl_both_residual`] including the dependence of `R̂` on β.
pub fn pcl_both_jacobian<T: Scalar>(data: &SecondPhaseData<T>, theta: &[T]) -> Result<Matrix<T>> {
    let model = RHatModel::fit(data)?;
    Ok(PclBothSystem::new(data, &model).jacobian(theta, None))
}

/// Pseudo conditional likelihood estimator using both the validation and the
/// non-validation records.
///
/// `R̂` depends on β. The stacked equations are solved by Newton's method on
/// the coupled system (the Jacobian carries `∂R̂/∂β`), started at the
/// validation-only estimate. If that fails, the solver alternates between
/// refreshing `R̂` at the current β and solving with `R̂` held fixed, until β
/// moves by less than `1e−6`, then retries the coupled solve from there.
pub fn pcl_both_fit<T: Scalar>(data: &SecondPhaseData<T>) -> Result<Estimate<T>> {
    let start = pcl_validate_fit(data)?;
    if data.non_validation().next().is_none() {
        return Ok(Estimate {
            kind: EstimatorKind::PclBoth,
            ..start
        });
    }
    let model = RHatModel::fit(data)?;
    let system = PclBothSystem::new(data, &model);
    let cfg = SolverConfig::default();
    let b = data.beta_index();

    let coupled = |theta: &Coefficients<T>| {
        newton_solve(
            |t| Ok(system.residual(t, None)),
            |t| Ok(system.jacobian(t, None)),
            theta,
            &cfg,
        )
    };
    let sol = match coupled(&start.theta) {
        Ok(sol) => sol,
        Err(first) => {
            log::debug!("coupled solve from the validation-only fit failed ({first}); alternating");
            let mut theta = start.theta.clone();
            for _ in 0..OUTER_MAX {
                let beta = theta.theta[b];
                let sol = newton_solve(
                    |t| Ok(system.residual(t, Some(beta))),
                    |t| Ok(system.jacobian(t, Some(beta))),
                    &theta,
                    &cfg,
                )?;
                let moved = (sol.coefficients.theta[b] - beta).abs();
                theta = sol.coefficients;
                if moved < T::lit(OUTER_TOL) {
                    break;
                }
            }
            coupled(&theta)?
        }
    };
    let info = system.information(&sol.coefficients.theta);
    let cov = info.inverse().map_err(|_| Error::SingularDesign)?;
    Ok(Estimate::from_cov(EstimatorKind::PclBoth, sol.coefficients, cov, true))
}

/// Fit one estimator by kind.
pub fn fit<T: Scalar>(kind: EstimatorKind, data: &SecondPhaseData<T>) -> Result<Estimate<T>> {
    match kind {
        EstimatorKind::Naive => naive_fit(data),
        EstimatorKind::Ipw => ipw_fit(data),
        EstimatorKind::PclValidate => pcl_validate_fit(data),
        EstimatorKind::PclBoth => pcl_both_fit(data),
    }
}

/// `H₊` implied by a plan's actual `(η₁, η₀)` split at `π`.
fn plan_h_plus<T: Scalar>(eta1: T, eta0: T, pi: T) -> T {
    let num = eta1 * pi;
    let den = num + eta0 * (T::one() - pi);
    if den > T::zero() {
        num / den
    } else {
        T::lit(0.5)
    }
}

/// Approximate `P(Y=1 | Z, δ=0)`: `π` tilted by `log[(1−η₁)/(1−η₀)]`.
fn plan_h_minus<T: Scalar>(eta1: T, eta0: T, pi: T) -> T {
    logistic(logit(pi) + non_validation_offset(eta1, eta0))
}

fn check_plan<T: Scalar>(cohort: &Cohort<T>, plan: &SamplingPlan<T>, pi: &PiEstimate<T>) -> Result<()> {
    if plan.len() != cohort.n() || pi.pi.len() != cohort.n() {
        return Err(Error::InvalidInput("plan or pi not aligned with the cohort".into()));
    }
    Ok(())
}

/// Expected information matrix of the validation-only estimator under a plan,
/// ordered `(z̃, X)` and averaged over the cohort. `H₊` is taken at the plan's
/// own `(η₁, η₀)` with `π̂` in place of the linear predictor.
pub fn pcl_validate_information<T: Scalar>(
    cohort: &Cohort<T>,
    moments: &MomentModel<T>,
    pi: &PiEstimate<T>,
    plan: &SamplingPlan<T>,
) -> Result<Matrix<T>> {
    check_plan(cohort, plan, pi)?;
    let ctx = DesignContext::new(cohort, moments, pi)?;
    let p = cohort.dim() + 2;
    let inv_n = T::one() / T::from_usize_lossy(cohort.n());
    let mut info = Matrix::zeros(p, p);
    let mut row = vec![T::zero(); p];
    for (i, rec) in cohort.iter().enumerate() {
        let mu = plan.mu[i];
        if mu <= T::zero() {
            continue;
        }
        let h = plan_h_plus(plan.eta1[i], plan.eta0[i], pi.pi[i]);
        let w = mu * h * (T::one() - h) * inv_n;
        let m = ctx.moments()[i];
        let zt = rec.z.augmented();
        let b = p - 1;
        row[..b].copy_from_slice(zt);
        row[b] = T::zero();
        info.add_outer(w, &row);
        for (k, z) in zt.iter().enumerate() {
            info[(k, b)] += w * m.m1 * *z;
            info[(b, k)] += w * m.m1 * *z;
        }
        info[(b, b)] += w * m.m2;
    }
    Ok(info)
}

/// `(β, β)` Schur complement of a block information matrix ordered `(α, β)`.
fn schur_beta<T: Scalar>(info: &Matrix<T>) -> Result<T> {
    let p = info.rows();
    let b = p - 1;
    let mut a = Matrix::zeros(b, b);
    for i in 0..b {
        for j in 0..b {
            a[(i, j)] = info[(i, j)];
        }
    }
    let c: Vec<T> = (0..b).map(|i| info[(i, b)]).collect();
    let sol = match a.solve(&c) {
        Ok(s) => s,
        Err(_) => a.psd_pinv_solve(&c)?.0,
    };
    Ok(info[(b, b)] - dot(&c, &sol))
}

/// Asymptotic variance of `√n (β̂ − β)` for the validation-only estimator: the
/// reciprocal of the efficient information under the plan.
pub fn var_beta_pclvalidate<T: Scalar>(
    cohort: &Cohort<T>,
    moments: &MomentModel<T>,
    pi: &PiEstimate<T>,
    plan: &SamplingPlan<T>,
) -> Result<T> {
    let info = pcl_validate_information(cohort, moments, pi, plan)?;
    let d = schur_beta(&info)?;
    if !(d > T::zero()) || !d.is_finite() {
        return Err(Error::SingularWeightMatrix);
    }
    Ok(T::one() / d)
}

/// Asymptotic variance of `√n (β̂ − β)` for the both-sets estimator, given
/// `R̂(Zᵢ)` for every record.
pub fn var_beta_pclboth<T: Scalar>(
    cohort: &Cohort<T>,
    moments: &MomentModel<T>,
    pi: &PiEstimate<T>,
    plan: &SamplingPlan<T>,
    r_hat: &[T],
) -> Result<T> {
    if r_hat.len() != cohort.n() {
        return Err(Error::InvalidInput("R-hat not aligned with the cohort".into()));
    }
    let mut info = pcl_validate_information(cohort, moments, pi, plan)?;
    let p = info.rows();
    let b = p - 1;
    let inv_n = T::one() / T::from_usize_lossy(cohort.n());
    let mut row = vec![T::zero(); p];
    for (i, rec) in cohort.iter().enumerate() {
        let rest = T::one() - plan.mu[i];
        if rest <= T::zero() {
            continue;
        }
        let h = plan_h_minus(plan.eta1[i], plan.eta0[i], pi.pi[i]);
        row[..b].copy_from_slice(rec.z.augmented());
        row[b] = r_hat[i];
        info.add_outer(rest * h * (T::one() - h) * inv_n, &row);
    }
    let d = schur_beta(&info)?;
    if !(d > T::zero()) || !d.is_finite() {
        return Err(Error::SingularWeightMatrix);
    }
    Ok(T::one() / d)
}
