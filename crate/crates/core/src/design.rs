//! Second-phase sampling plans.
//!
//! The proposed plan maximises the (approximate) Fisher information for the
//! predictor effect of the validation-only pseudo conditional likelihood
//! estimator subject to an expected subsample size. For a fixed Lagrange
//! multiplier `λ` the optimal selection probability of a subject follows a
//! three-branch Kuhn–Tucker rule driven by a generalised conditional variance
//! `σ̃²(z)`, which itself depends on the whole allocation; the two are iterated
//! to a fixed point and `λ` is then found by bisection on the size constraint.
//!
//! Throughout, integrals over the covariate distribution are replaced by
//! averages over the phase-one cohort.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cohort::{Coefficients, Cohort};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::logistic::fit_logistic;
use crate::moments::{MomentModel, Moments};
use crate::scalar::{dot, mean, Scalar};
use crate::streams::{substream, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeKind {
    Proposed,
    TestLocal,
    Random,
    CaseControl,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 4] = [
        SchemeKind::Proposed,
        SchemeKind::TestLocal,
        SchemeKind::Random,
        SchemeKind::CaseControl,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SchemeKind::Proposed => "proposed",
            SchemeKind::TestLocal => "testlocal",
            SchemeKind::Random => "random",
            SchemeKind::CaseControl => "case-control",
        }
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SchemeKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "proposed" => Ok(SchemeKind::Proposed),
            "testlocal" | "test-local" => Ok(SchemeKind::TestLocal),
            "random" => Ok(SchemeKind::Random),
            "case-control" | "casecontrol" => Ok(SchemeKind::CaseControl),
            other => Err(Error::InvalidInput(format!("unknown scheme '{other}'"))),
        }
    }
}

/// Fitted `P(Y = 1 | Z)` at every cohort record.
#[derive(Debug, Clone, PartialEq)]
pub struct PiEstimate<T> {
    pub pi: Vec<T>,
    pub source_coefficients: Coefficients<T>,
}

pub const PI_CLIP: f64 = 1e-6;

/// Logistic regression of `Y` on `Z` over the cohort, clipped away from 0 and 1.
pub fn estimate_pi<T: Scalar>(cohort: &Cohort<T>) -> Result<PiEstimate<T>> {
    let fit = fit_logistic(cohort, None)?;
    let lo = T::lit(PI_CLIP);
    let hi = T::one() - lo;
    let pi: Vec<T> = cohort
        .iter()
        .map(|r| crate::logistic::logistic(dot(&fit.coefficients.theta, r.z.augmented())).max(lo).min(hi))
        .collect();
    let high = pi.iter().filter(|p| **p >= T::lit(0.5)).count();
    if high > 0 {
        log::warn!("fitted P(Y=1|Z) is at least 1/2 for {high} records; the design assumes it stays below 1/2");
    }
    Ok(PiEstimate {
        pi,
        source_coefficients: fit.coefficients,
    })
}

/// Counts behind a fixed-size case-control draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseControlCounts {
    pub cases: usize,
    pub controls: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingPlan<T> {
    pub scheme: SchemeKind,
    /// `μ(Zᵢ) = P(δᵢ = 1 | Zᵢ)`
    pub mu: Vec<T>,
    /// `η₁(Zᵢ) = P(δᵢ = 1 | Yᵢ = 1, Zᵢ)`
    pub eta1: Vec<T>,
    /// `η₀(Zᵢ) = P(δᵢ = 1 | Yᵢ = 0, Zᵢ)`
    pub eta0: Vec<T>,
    pub pi_hat: Option<Vec<T>>,
    /// `σ̃²` for the proposed plan, `Var(X|Z)` for the local-alternative plan.
    pub sigma_sq: Option<Vec<T>>,
    pub lambda: Option<T>,
    pub target_fraction: T,
    pub case_control: Option<CaseControlCounts>,
    /// False when the fixed-point iteration hit its cap at the final multiplier.
    pub converged: bool,
}

impl<T: Scalar> SamplingPlan<T> {
    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    /// Selection probability of a record given its observed outcome.
    pub fn eta_for(&self, i: usize, y: u8) -> T {
        if y == 1 {
            self.eta1[i]
        } else {
            self.eta0[i]
        }
    }

    pub fn mean_mu(&self) -> T {
        mean(&self.mu)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionIndicators {
    pub delta: Vec<u8>,
    pub realized_count: usize,
    pub seed: u64,
}

impl SelectionIndicators {
    pub fn from_delta(delta: Vec<u8>, seed: u64) -> Self {
        let realized_count = delta.iter().filter(|d| **d == 1).count();
        Self {
            delta,
            realized_count,
            seed,
        }
    }
}

/// Tuning for the fixed-point iteration and the multiplier search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignConfig {
    /// Stop the fixed-point iteration once the Lagrangian changes by less.
    pub alpha: f64,
    pub n_iter: usize,
    /// Allowed gap between the mean selection probability and the target.
    pub search_tol: f64,
    pub max_bisection: usize,
}

impl Default for DesignConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-6,
            n_iter: 200,
            search_tol: 1e-4,
            max_bisection: 200,
        }
    }
}

/// `min(π, 1 − π)`; equal to `π` whenever `π < 1/2`.
#[inline]
fn minority<T: Scalar>(pi: T) -> T {
    pi.min(T::one() - pi)
}

/// The `(H₊, H₊(1−H₊))` pair attained by the best `(η₁, η₀)` split of `μ`.
///
/// When `μ ≤ 2π` the split makes `H₊ = 1/2`; above that `η₁` saturates at 1 and
/// `H₊ = π/μ`.
pub fn h_plus_approx<T: Scalar>(mu: T, pi: T) -> Result<(T, T)> {
    if !(pi > T::zero() && pi < T::one()) {
        return Err(Error::DomainError(format!("pi = {pi} outside (0, 1)")));
    }
    if !(mu > T::zero() && mu <= T::one()) {
        return Err(Error::DomainError(format!("H+ undefined at mu = {mu}")));
    }
    let half = T::lit(0.5);
    let q = minority(pi);
    if mu <= T::lit(2.0) * q {
        return Ok((half, T::lit(0.25)));
    }
    let (eta1, _) = eta_from_mu(mu, pi);
    let h = eta1 * pi / mu;
    Ok((h, h * (T::one() - h)))
}

/// `μ · H₊(1 − H₊)` as a function of `μ`: `μ/4` up to `2π`, `π − π²/μ` beyond.
/// Zero at `μ = 0`.
#[inline]
pub fn information_weight<T: Scalar>(mu: T, pi: T) -> T {
    if mu <= T::zero() {
        return T::zero();
    }
    let q = minority(pi);
    if mu <= T::lit(2.0) * q {
        mu * T::lit(0.25)
    } else {
        q - q * q / mu
    }
}

/// Kuhn–Tucker allocation for one subject at multiplier `λ`.
///
/// Ties at `λ = σ̃²/4` resolve to the interior branch, which gives `2π` there.
pub fn kt_update<T: Scalar>(sigma_tilde_sq: T, pi: T, lambda: T) -> T {
    let s2 = sigma_tilde_sq.max(T::zero());
    let q = minority(pi);
    if s2 / T::lit(4.0) < lambda {
        T::zero()
    } else if lambda <= s2 * q * q {
        T::one()
    } else {
        (s2.sqrt() * q / lambda.sqrt()).min(T::one())
    }
}

/// Recover `(η₁, η₀)` from `μ` by the split that maximises `μ H₊(1 − H₊)`.
/// Always satisfies `μ = η₁π + η₀(1 − π)`.
pub fn eta_from_mu<T: Scalar>(mu: T, pi: T) -> (T, T) {
    if mu <= T::zero() {
        return (T::zero(), T::zero());
    }
    let two = T::lit(2.0);
    let one = T::one();
    let q = minority(pi);
    if mu <= two * q {
        (mu / (two * pi), mu / (two * (one - pi)))
    } else if pi <= T::lit(0.5) {
        (one, ((mu - pi) / (one - pi)).min(one))
    } else {
        (((mu - (one - pi)) / pi).min(one), one)
    }
}

/// Everything the design computations need, evaluated once per cohort.
pub struct DesignContext<'a, T> {
    cohort: &'a Cohort<T>,
    moments: Vec<Moments<T>>,
    pi: Vec<T>,
}

/// Weighted second-moment summaries of the covariates under the measure
/// `μ H₊(1−H₊) dF̂`.
struct WeightedFit<T> {
    /// Coefficients of the weighted regression of `E(X|Z)` on `z̃`.
    rho: Vec<T>,
    /// `∫ w E(X²|z)`
    second: T,
    /// `bᵀ A⁻¹ b`
    explained: T,
    /// Null space of `A` when it is rank deficient.
    null_basis: Vec<Vec<T>>,
}

impl<'a, T: Scalar> DesignContext<'a, T> {
    pub fn new(cohort: &'a Cohort<T>, moments: &MomentModel<T>, pi: &PiEstimate<T>) -> Result<Self> {
        if pi.pi.len() != cohort.n() {
            return Err(Error::InvalidInput("pi estimate is not aligned with the cohort".into()));
        }
        Ok(Self {
            cohort,
            moments: moments.eval_cohort(cohort)?,
            pi: pi.pi.clone(),
        })
    }

    pub fn n(&self) -> usize {
        self.cohort.n()
    }

    pub fn pi(&self) -> &[T] {
        &self.pi
    }

    pub fn moments(&self) -> &[Moments<T>] {
        &self.moments
    }

    /// `Var(X | Zᵢ)` at every record.
    pub fn conditional_variance(&self) -> Vec<T> {
        self.moments.iter().map(Moments::variance).collect()
    }

    fn check_mu(&self, mu: &[T]) -> Result<()> {
        if mu.len() != self.n() {
            return Err(Error::InvalidInput("selection probabilities not aligned with cohort".into()));
        }
        if let Some(bad) = mu.iter().position(|m| !(*m >= T::zero() && *m <= T::one())) {
            return Err(Error::InvalidInput(format!("mu[{bad}] outside [0, 1]")));
        }
        Ok(())
    }

    fn weighted_fit(&self, mu: &[T]) -> Result<WeightedFit<T>> {
        let p = self.cohort.dim() + 1;
        let inv_n = T::one() / T::from_usize_lossy(self.n());
        let mut a = Matrix::zeros(p, p);
        let mut b = vec![T::zero(); p];
        let mut second = T::zero();
        for ((rec, m), (&mu_i, &pi_i)) in self
            .cohort
            .iter()
            .zip(&self.moments)
            .zip(mu.iter().zip(&self.pi))
        {
            let w = information_weight(mu_i, pi_i) * inv_n;
            if w == T::zero() {
                continue;
            }
            let zt = rec.z.augmented();
            a.add_outer(w, zt);
            for (acc, z) in b.iter_mut().zip(zt) {
                *acc += w * m.m1 * *z;
            }
            second += w * m.m2;
        }
        if !a.is_finite() || !second.is_finite() {
            return Err(Error::SingularWeightMatrix);
        }
        // A can lose rank when few records carry weight; the minimum-norm
        // least-squares coefficients keep every quantity defined.
        let (rho, null_basis) = match a.solve(&b) {
            Ok(r) => (r, Vec::new()),
            Err(_) => (a.psd_pinv_solve(&b)?.0, a.psd_null_space()?),
        };
        let explained = dot(&b, &rho);
        Ok(WeightedFit {
            rho,
            second,
            explained,
            null_basis,
        })
    }

    /// Generalised conditional variance `σ̃²(Zᵢ)` under allocation `mu`.
    pub fn sigma_tilde(&self, mu: &[T]) -> Result<Vec<T>> {
        self.check_mu(mu)?;
        let fit = self.weighted_fit(mu)?;
        Ok(self.sigma_tilde_from(&fit))
    }

    fn sigma_tilde_from(&self, fit: &WeightedFit<T>) -> Vec<T> {
        let two = T::lit(2.0);
        let tol = T::lit(T::RANK_TOL).sqrt();
        self.cohort
            .iter()
            .zip(&self.moments)
            .map(|(rec, m)| {
                let zt = rec.z.augmented();
                // A record whose covariates leave the span of the weighted ones
                // would be fitted exactly by the regression as soon as it got
                // any weight, so its marginal value is its own variance.
                let outside: T = fit.null_basis.iter().map(|v| dot(v, zt).powi(2)).sum();
                if outside > tol * dot(zt, zt) {
                    return m.variance().max(T::zero());
                }
                let proj = dot(zt, &fit.rho);
                (m.m2 - two * m.m1 * proj + proj * proj).max(T::zero())
            })
            .collect()
    }

    /// Efficient information for the predictor effect under allocation `mu`
    /// (the Schur complement of the covariate block).
    pub fn objective(&self, mu: &[T]) -> Result<T> {
        self.check_mu(mu)?;
        let fit = self.weighted_fit(mu)?;
        Ok((fit.second - fit.explained).max(T::zero()))
    }

    /// Fixed-point iteration between `σ̃²` and the Kuhn–Tucker allocation at a
    /// fixed multiplier, started from uniform random probabilities.
    pub fn optimal_mu(&self, lambda: T, cfg: &DesignConfig, seed: u64) -> Result<MuIterate<T>> {
        if !(lambda > T::zero()) {
            return Err(Error::DomainError(format!("lambda = {lambda} must be positive")));
        }
        let mut rng = substream(seed, Stream::PlanInit, 0);
        let mut mu: Vec<T> = (0..self.n())
            .map(|_| T::lit(rng.random::<f64>()))
            .collect();
        let alpha = T::lit(cfg.alpha);
        // One weighted fit per iteration serves both the Lagrangian of the
        // current allocation and the σ̃² that produces the next one.
        let mut fit = self.weighted_fit(&mu)?;
        let mut prev = (fit.second - fit.explained).max(T::zero()) - lambda * mean(&mu);
        let mut sigma = Vec::new();
        for k in 1..=cfg.n_iter {
            sigma = self.sigma_tilde_from(&fit);
            mu = sigma
                .iter()
                .zip(&self.pi)
                .map(|(s2, pi)| kt_update(*s2, *pi, lambda))
                .collect();
            fit = self.weighted_fit(&mu)?;
            let current = (fit.second - fit.explained).max(T::zero()) - lambda * mean(&mu);
            let delta = (current - prev).abs();
            prev = current;
            if delta < alpha {
                return Ok(MuIterate {
                    mu,
                    sigma_tilde_sq: sigma,
                    iterations: k,
                    converged: true,
                });
            }
        }
        log::warn!("allocation fixed point did not settle within {} iterations", cfg.n_iter);
        Ok(MuIterate {
            mu,
            sigma_tilde_sq: sigma,
            iterations: cfg.n_iter,
            converged: false,
        })
    }

    /// Multiplier and allocation meeting `mean μ = target` for the proposed plan.
    pub fn solve_lambda(&self, target: T, cfg: &DesignConfig, seed: u64) -> Result<LambdaSolution<T>> {
        if target >= T::one() {
            let mu = vec![T::one(); self.n()];
            let sigma = self.sigma_tilde(&mu)?;
            return Ok(select_all(mu, sigma, &self.pi));
        }
        search_lambda(
            |lambda| {
                let it = self.optimal_mu(lambda, cfg, seed)?;
                Ok((it.mu, it.sigma_tilde_sq, it.converged))
            },
            self.initial_upper(target)?,
            target,
            cfg,
        )
    }

    /// Same search with the fixed `Var(X|Z)` in place of `σ̃²`.
    pub fn solve_lambda_local(&self, target: T, cfg: &DesignConfig) -> Result<LambdaSolution<T>> {
        let sigma = self.conditional_variance();
        if target >= T::one() {
            return Ok(select_all(vec![T::one(); self.n()], sigma, &self.pi));
        }
        let top = sigma.iter().fold(T::zero(), |m, v| m.max(*v));
        search_lambda(
            |lambda| {
                let mu = sigma
                    .iter()
                    .zip(&self.pi)
                    .map(|(s2, pi)| kt_update(*s2, *pi, lambda))
                    .collect();
                Ok((mu, sigma.clone(), true))
            },
            top / T::lit(4.0) + T::one(),
            target,
            cfg,
        )
    }

    fn initial_upper(&self, target: T) -> Result<T> {
        let mu = vec![target.max(T::lit(1e-3)); self.n()];
        let sigma = self.sigma_tilde(&mu)?;
        Ok(sigma.iter().fold(T::zero(), |m, v| m.max(*v)) / T::lit(4.0) + T::one())
    }
}

/// Output of the fixed-point iteration at one multiplier.
#[derive(Debug, Clone, PartialEq)]
pub struct MuIterate<T> {
    pub mu: Vec<T>,
    /// `σ̃²` from the last iteration, i.e. the values that produced `mu`.
    pub sigma_tilde_sq: Vec<T>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaSolution<T> {
    pub lambda: T,
    pub mu: Vec<T>,
    pub sigma_sq: Vec<T>,
    pub converged: bool,
    /// True when the size constraint had no exact root in `λ` and the
    /// allocation was split across the jump.
    pub zero_crossing: bool,
}

fn select_all<T: Scalar>(mu: Vec<T>, sigma: Vec<T>, pi: &[T]) -> LambdaSolution<T> {
    let lambda = sigma
        .iter()
        .zip(pi)
        .map(|(s2, p)| {
            let q = minority(*p);
            *s2 * q * q
        })
        .fold(T::infinity(), T::min);
    LambdaSolution {
        lambda,
        mu,
        sigma_sq: sigma,
        converged: true,
        zero_crossing: false,
    }
}

/// Bisection on `log λ` for `mean μ(λ) = target`, exploiting that the mean
/// allocation is nonincreasing in `λ`. When the mean jumps over the target,
/// the subjects whose allocation changes across the jump share the remaining
/// budget so the constraint holds exactly.
fn search_lambda<T, F>(eval: F, upper: T, target: T, cfg: &DesignConfig) -> Result<LambdaSolution<T>>
where
    T: Scalar,
    F: Fn(T) -> Result<(Vec<T>, Vec<T>, bool)>,
{
    if !(target > T::zero()) {
        return Err(Error::BracketFailure { target: target.as_f64() });
    }
    let tol = T::lit(cfg.search_tol);
    let fail = || Error::BracketFailure { target: target.as_f64() };
    let done = |lambda: T, (mu, sigma, converged): (Vec<T>, Vec<T>, bool)| LambdaSolution {
        lambda,
        mu,
        sigma_sq: sigma,
        converged,
        zero_crossing: false,
    };

    let mut lo = T::lit(1e-12);
    let mut lo_val = eval(lo)?;
    let mut lo_mean = mean(&lo_val.0);
    if (lo_mean - target).abs() <= tol {
        return Ok(done(lo, lo_val));
    }
    if lo_mean < target {
        return Err(fail());
    }
    let mut hi = upper.max(T::lit(1e-12) * T::lit(2.0));
    let mut hi_val = eval(hi)?;
    let mut hi_mean = mean(&hi_val.0);
    let mut doublings = 0;
    while hi_mean > target + tol {
        doublings += 1;
        if doublings > 200 {
            return Err(fail());
        }
        lo = hi;
        lo_val = hi_val;
        lo_mean = hi_mean;
        hi *= T::lit(2.0);
        hi_val = eval(hi)?;
        hi_mean = mean(&hi_val.0);
    }
    if (hi_mean - target).abs() <= tol {
        return Ok(done(hi, hi_val));
    }

    for _ in 0..cfg.max_bisection {
        if hi / lo - T::one() <= T::lit(1e-13) {
            break;
        }
        let mid = (lo * hi).sqrt();
        let val = eval(mid)?;
        let m = mean(&val.0);
        if (m - target).abs() <= tol {
            return Ok(done(mid, val));
        }
        if m > target {
            lo = mid;
            lo_val = val;
            lo_mean = m;
        } else {
            hi = mid;
            hi_val = val;
            hi_mean = m;
        }
    }

    // No multiplier hits the target: split along the jump.
    let theta = (target - hi_mean) / (lo_mean - hi_mean);
    let mu: Vec<T> = hi_val
        .0
        .iter()
        .zip(&lo_val.0)
        .map(|(h, l)| (*h + theta * (*l - *h)).max(T::zero()).min(T::one()))
        .collect();
    Ok(LambdaSolution {
        lambda: (lo * hi).sqrt(),
        mu,
        sigma_sq: hi_val.1,
        converged: hi_val.2 && lo_val.2,
        zero_crossing: true,
    })
}

/// `σ̃²(Zᵢ)` at allocation `mu`.
pub fn sigma_tilde<T: Scalar>(
    cohort: &Cohort<T>,
    moments: &MomentModel<T>,
    pi: &PiEstimate<T>,
    mu: &[T],
) -> Result<Vec<T>> {
    DesignContext::new(cohort, moments, pi)?.sigma_tilde(mu)
}

/// Information for the predictor effect (the reciprocal of its asymptotic
/// variance) under allocation `mu`.
pub fn design_objective<T: Scalar>(
    cohort: &Cohort<T>,
    moments: &MomentModel<T>,
    pi: &PiEstimate<T>,
    mu: &[T],
) -> Result<T> {
    DesignContext::new(cohort, moments, pi)?.objective(mu)
}

pub fn optimal_mu<T: Scalar>(
    cohort: &Cohort<T>,
    moments: &MomentModel<T>,
    pi: &PiEstimate<T>,
    lambda: T,
    cfg: &DesignConfig,
    seed: u64,
) -> Result<MuIterate<T>> {
    DesignContext::new(cohort, moments, pi)?.optimal_mu(lambda, cfg, seed)
}

pub fn solve_lambda<T: Scalar>(
    cohort: &Cohort<T>,
    moments: &MomentModel<T>,
    pi: &PiEstimate<T>,
    target_fraction: T,
    cfg: &DesignConfig,
    seed: u64,
) -> Result<LambdaSolution<T>> {
    check_fraction(target_fraction)?;
    DesignContext::new(cohort, moments, pi)?.solve_lambda(target_fraction, cfg, seed)
}

fn check_fraction<T: Scalar>(f: T) -> Result<()> {
    if f > T::zero() && f <= T::one() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("target fraction {f} outside (0, 1]")))
    }
}

fn plan_from_solution<T: Scalar>(
    scheme: SchemeKind,
    sol: LambdaSolution<T>,
    pi: &[T],
    target: T,
) -> SamplingPlan<T> {
    let (eta1, eta0): (Vec<T>, Vec<T>) = sol
        .mu
        .iter()
        .zip(pi)
        .map(|(m, p)| eta_from_mu(*m, *p))
        .unzip();
    SamplingPlan {
        scheme,
        mu: sol.mu,
        eta1,
        eta0,
        pi_hat: Some(pi.to_vec()),
        sigma_sq: Some(sol.sigma_sq),
        lambda: Some(sol.lambda),
        target_fraction: target,
        case_control: None,
        converged: sol.converged,
    }
}

/// The proposed optimal plan.
pub fn proposed_plan<T: Scalar>(
    cohort: &Cohort<T>,
    moments: &MomentModel<T>,
    pi: &PiEstimate<T>,
    target_fraction: T,
    cfg: &DesignConfig,
    seed: u64,
) -> Result<SamplingPlan<T>> {
    check_fraction(target_fraction)?;
    let ctx = DesignContext::new(cohort, moments, pi)?;
    let sol = ctx.solve_lambda(target_fraction, cfg, seed)?;
    Ok(plan_from_solution(SchemeKind::Proposed, sol, &pi.pi, target_fraction))
}

/// Optimal plan for testing local alternatives: the same allocation rule with
/// `Var(X|Z)` in place of `σ̃²`.
pub fn testlocal_plan<T: Scalar>(
    cohort: &Cohort<T>,
    moments: &MomentModel<T>,
    pi: &PiEstimate<T>,
    target_fraction: T,
    cfg: &DesignConfig,
) -> Result<SamplingPlan<T>> {
    check_fraction(target_fraction)?;
    let ctx = DesignContext::new(cohort, moments, pi)?;
    let sol = ctx.solve_lambda_local(target_fraction, cfg)?;
    Ok(plan_from_solution(SchemeKind::TestLocal, sol, &pi.pi, target_fraction))
}

/// Equal selection probabilities for everyone.
pub fn random_plan<T: Scalar>(cohort: &Cohort<T>, target_fraction: T) -> Result<SamplingPlan<T>> {
    check_fraction(target_fraction)?;
    let n = cohort.n();
    Ok(SamplingPlan {
        scheme: SchemeKind::Random,
        mu: vec![target_fraction; n],
        eta1: vec![target_fraction; n],
        eta0: vec![target_fraction; n],
        pi_hat: None,
        sigma_sq: None,
        lambda: None,
        target_fraction,
        case_control: None,
        converged: true,
    })
}

/// Fixed-size case-control plan of `total` subjects: half cases (rounded
/// down) and half controls, with slots a stratum cannot fill passed to the
/// other one. `μ` is reported through `π̂` so that downstream information
/// calculations see the true marginal selection probability.
pub fn case_control_plan<T: Scalar>(
    cohort: &Cohort<T>,
    total: usize,
    pi: &PiEstimate<T>,
) -> Result<SamplingPlan<T>> {
    if total < 2 {
        return Err(Error::InvalidInput("case-control size must be at least 2".into()));
    }
    let n1 = cohort.case_count();
    let n0 = cohort.control_count();
    if n1 == 0 {
        return Err(Error::EmptyStratum(1));
    }
    if n0 == 0 {
        return Err(Error::EmptyStratum(0));
    }
    let mut cases = (total / 2).min(n1);
    let controls = (total - cases).min(n0);
    cases = (total - controls).min(n1);
    let e1 = T::from_usize_lossy(cases) / T::from_usize_lossy(n1);
    let e0 = T::from_usize_lossy(controls) / T::from_usize_lossy(n0);
    let mu = pi.pi.iter().map(|p| e1 * *p + e0 * (T::one() - *p)).collect();
    let n = cohort.n();
    Ok(SamplingPlan {
        scheme: SchemeKind::CaseControl,
        mu,
        eta1: vec![e1; n],
        eta0: vec![e0; n],
        pi_hat: Some(pi.pi.clone()),
        sigma_sq: None,
        lambda: None,
        target_fraction: T::from_usize_lossy(total.min(n)) / T::from_usize_lossy(n),
        case_control: Some(CaseControlCounts { cases, controls }),
        converged: true,
    })
}

/// Draw the selection indicators. Probability-based plans select each subject
/// independently with probability `η_{Yᵢ}(Zᵢ)`; case-control plans draw their
/// fixed counts without replacement within each outcome stratum.
pub fn draw_indicators<T: Scalar>(
    plan: &SamplingPlan<T>,
    cohort: &Cohort<T>,
    seed: u64,
) -> Result<SelectionIndicators> {
    draw_indicators_lane(plan, cohort, seed, 0)
}

/// As [`draw_indicators`] on an independent lane of the selection stream.
pub fn draw_indicators_lane<T: Scalar>(
    plan: &SamplingPlan<T>,
    cohort: &Cohort<T>,
    seed: u64,
    lane: u64,
) -> Result<SelectionIndicators> {
    if plan.len() != cohort.n() {
        return Err(Error::InvalidInput("plan is not aligned with the cohort".into()));
    }
    let mut rng = substream(seed, Stream::Selection, lane);
    let mut delta = vec![0u8; cohort.n()];
    if let Some(cc) = plan.case_control {
        for (stratum, count) in [(1u8, cc.cases), (0u8, cc.controls)] {
            let members: Vec<usize> = cohort
                .iter()
                .enumerate()
                .filter(|(_, r)| r.y == stratum)
                .map(|(i, _)| i)
                .collect();
            if count > members.len() {
                return Err(Error::InvalidInput("case-control count exceeds stratum size".into()));
            }
            for k in sample(&mut rng, members.len(), count) {
                delta[members[k]] = 1;
            }
        }
    } else {
        for (i, rec) in cohort.iter().enumerate() {
            let p = plan.eta_for(i, rec.y).as_f64();
            let u: f64 = rng.random();
            delta[i] = u8::from(u < p);
        }
    }
    Ok(SelectionIndicators::from_delta(delta, seed))
}
