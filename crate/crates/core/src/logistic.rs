//! Logistic link, a damped Newton solver for vector estimating equations and
//! the logistic maximum-likelihood fit built on top of it.

use crate::cohort::{Coefficients, Cohort};
use crate::error::{Error, Result};
use crate::linalg::{LinalgError, Matrix};
use crate::scalar::{dot, max_abs, Scalar};

/// `H(u) = 1 / (1 + e^{−u})`, evaluated without overflow for large `|u|`.
#[inline]
pub fn logistic<T: Scalar>(u: T) -> T {
    if u >= T::zero() {
        T::one() / (T::one() + (-u).exp())
    } else {
        let e = u.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub fn logit<T: Scalar>(p: T) -> T {
    (p / (T::one() - p)).ln()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig<T> {
    /// Convergence threshold on the max-norm of the residual.
    pub tol: T,
    pub max_iter: usize,
    pub max_halvings: usize,
    /// Declare divergence once any coordinate exceeds this in absolute value.
    pub divergence_cap: Option<T>,
}

impl<T: Scalar> Default for SolverConfig<T> {
    fn default() -> Self {
        Self {
            tol: T::lit(T::SOLVER_TOL),
            max_iter: 100,
            max_halvings: 30,
            divergence_cap: Some(T::lit(50.0)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution<T> {
    pub coefficients: Coefficients<T>,
    pub iterations: usize,
    pub residual_norm: T,
}

/// Solve `residual(θ) = 0` by Newton's method with step halving.
///
/// A step is accepted when it lowers the max-norm of the residual; otherwise it
/// is halved up to `max_halvings` times. Exceeding `divergence_cap` in any
/// coordinate is reported as [`Error::Separation`].
pub fn newton_solve<T, R, J>(
    residual: R,
    jacobian: J,
    theta0: &Coefficients<T>,
    cfg: &SolverConfig<T>,
) -> Result<Solution<T>>
where
    T: Scalar,
    R: Fn(&[T]) -> Result<Vec<T>>,
    J: Fn(&[T]) -> Result<Matrix<T>>,
{
    let (sol, status) = newton_iterate(residual, jacobian, theta0, cfg)?;
    match status {
        NewtonStatus::Converged => Ok(sol),
        NewtonStatus::Stalled | NewtonStatus::IterationLimit => Err(Error::NonConvergence {
            iterations: sol.iterations,
            residual: sol.residual_norm.as_f64(),
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NewtonStatus {
    Converged,
    /// No step length lowered the residual.
    Stalled,
    IterationLimit,
}

/// Newton iteration that hands back its last iterate instead of failing when
/// it runs out of iterations or cannot make progress. Singular Jacobians,
/// divergence and non-finite starting residuals are still errors.
pub fn newton_iterate<T, R, J>(
    residual: R,
    jacobian: J,
    theta0: &Coefficients<T>,
    cfg: &SolverConfig<T>,
) -> Result<(Solution<T>, NewtonStatus)>
where
    T: Scalar,
    R: Fn(&[T]) -> Result<Vec<T>>,
    J: Fn(&[T]) -> Result<Matrix<T>>,
{
    if !theta0.is_finite() {
        return Err(Error::InvalidInput("initial value is not finite".into()));
    }
    let mut theta = theta0.theta.clone();
    let mut r = residual(&theta)?;
    if r.len() != theta.len() {
        return Err(Error::InvalidInput("residual and parameter dimensions differ".into()));
    }
    let mut norm = max_abs(&r);
    if !norm.is_finite() {
        return Err(Error::InvalidInput("residual is not finite at the initial value".into()));
    }
    let half = T::lit(0.5);
    let finish = |theta: Vec<T>, iterations, norm, status| {
        Ok((
            Solution {
                coefficients: Coefficients::new(theta, theta0.beta_index),
                iterations,
                residual_norm: norm,
            },
            status,
        ))
    };
    for iter in 0..cfg.max_iter {
        if norm <= cfg.tol {
            return finish(theta, iter, norm, NewtonStatus::Converged);
        }
        let jac = jacobian(&theta)?;
        let neg_r: Vec<T> = r.iter().map(|v| -*v).collect();
        let step = jac.solve(&neg_r).map_err(|e| match e {
            LinalgError::Singular => Error::SingularJacobian,
            other => other.into(),
        })?;
        let mut scale = T::one();
        let mut accepted = None;
        for _ in 0..=cfg.max_halvings {
            let trial: Vec<T> = theta.iter().zip(&step).map(|(t, s)| *t + scale * *s).collect();
            if let Ok(rt) = residual(&trial) {
                let nt = max_abs(&rt);
                if nt.is_finite() && nt < norm {
                    accepted = Some((trial, rt, nt));
                    break;
                }
            }
            scale *= half;
        }
        let Some((trial, rt, nt)) = accepted else {
            return finish(theta, iter, norm, NewtonStatus::Stalled);
        };
        theta = trial;
        r = rt;
        norm = nt;
        if let Some(cap) = cfg.divergence_cap {
            if max_abs(&theta) > cap {
                return Err(Error::Separation);
            }
        }
    }
    if norm <= cfg.tol {
        return finish(theta, cfg.max_iter, norm, NewtonStatus::Converged);
    }
    finish(theta, cfg.max_iter, norm, NewtonStatus::IterationLimit)
}

/// Result of a logistic maximum-likelihood fit.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit<T> {
    pub coefficients: Coefficients<T>,
    /// Inverse of the observed information at the solution.
    pub covariance: Matrix<T>,
    pub iterations: usize,
}

/// Weighted Bernoulli score `Σ wᵢ xᵢ (yᵢ − H(xᵢᵀθ + oᵢ))`.
pub fn logistic_score<T: Scalar>(
    rows: &[Vec<T>],
    y: &[T],
    offset: Option<&[T]>,
    weights: Option<&[T]>,
    theta: &[T],
) -> Vec<T> {
    let mut s = vec![T::zero(); theta.len()];
    for (i, row) in rows.iter().enumerate() {
        let w = weights.map_or(T::one(), |w| w[i]);
        if w == T::zero() {
            continue;
        }
        let o = offset.map_or(T::zero(), |o| o[i]);
        let resid = w * (y[i] - logistic(dot(row, theta) + o));
        for (acc, x) in s.iter_mut().zip(row) {
            *acc += resid * *x;
        }
    }
    s
}

/// Weighted information `Σ wᵢ pᵢ(1−pᵢ) xᵢ xᵢᵀ`, the negated score Jacobian.
pub fn logistic_information<T: Scalar>(
    rows: &[Vec<T>],
    offset: Option<&[T]>,
    weights: Option<&[T]>,
    theta: &[T],
) -> Matrix<T> {
    let p = theta.len();
    let mut info = Matrix::zeros(p, p);
    for (i, row) in rows.iter().enumerate() {
        let w = weights.map_or(T::one(), |w| w[i]);
        if w == T::zero() {
            continue;
        }
        let o = offset.map_or(T::zero(), |o| o[i]);
        let mu = logistic(dot(row, theta) + o);
        info.add_outer(w * mu * (T::one() - mu), row);
    }
    info
}

/// Logistic MLE on an explicit design. `weights` turn it into a weighted
/// (pseudo-likelihood) fit; `offset` enters the linear predictor unscaled.
pub fn fit_logistic_rows<T: Scalar>(
    rows: &[Vec<T>],
    y: &[T],
    offset: Option<&[T]>,
    weights: Option<&[T]>,
    beta_index: Option<usize>,
    cfg: &SolverConfig<T>,
) -> Result<LogisticFit<T>> {
    let p = rows.first().map_or(0, Vec::len);
    fit_logistic_from(rows, y, offset, weights, &Coefficients::zeros(p, beta_index), cfg)
}

/// As [`fit_logistic_rows`] with the Newton iteration started at `start`.
pub fn fit_logistic_from<T: Scalar>(
    rows: &[Vec<T>],
    y: &[T],
    offset: Option<&[T]>,
    weights: Option<&[T]>,
    start: &Coefficients<T>,
    cfg: &SolverConfig<T>,
) -> Result<LogisticFit<T>> {
    let n = rows.len();
    if n == 0 {
        return Err(Error::InvalidInput("no observations to fit".into()));
    }
    let p = rows[0].len();
    if start.theta.len() != p {
        return Err(Error::InvalidInput("starting value has the wrong length".into()));
    }
    if y.len() != n || offset.is_some_and(|o| o.len() != n) || weights.is_some_and(|w| w.len() != n) {
        return Err(Error::InvalidInput("fit inputs have mismatched lengths".into()));
    }
    let active = |i: usize| weights.is_none_or(|w| w[i] > T::zero());
    let (mut has0, mut has1) = (false, false);
    for i in (0..n).filter(|&i| active(i)) {
        if y[i] > T::lit(0.5) {
            has1 = true;
        } else {
            has0 = true;
        }
    }
    if !(has0 && has1) {
        return Err(Error::NoVariation);
    }
    let mut gram = Matrix::zeros(p, p);
    for (i, row) in rows.iter().enumerate().filter(|(i, _)| active(*i)) {
        gram.add_outer(weights.map_or(T::one(), |w| w[i]), row);
    }
    if gram.symmetric_eigen()?.0.iter().fold(T::infinity(), |m, v| m.min(*v))
        <= gram.max_abs() * T::lit(T::RANK_TOL)
    {
        return Err(Error::SingularDesign);
    }

    let sol = newton_solve(
        |t| Ok(logistic_score(rows, y, offset, weights, t)),
        |t| {
            let mut j = logistic_information(rows, offset, weights, t);
            j.scale(-T::one());
            Ok(j)
        },
        start,
        cfg,
    )
    .map_err(|e| match e {
        Error::SingularJacobian => Error::SingularDesign,
        other => other,
    })?;
    let info = logistic_information(rows, offset, weights, &sol.coefficients.theta);
    let covariance = info.inverse().map_err(|_| Error::SingularDesign)?;
    Ok(LogisticFit {
        coefficients: sol.coefficients,
        covariance,
        iterations: sol.iterations,
    })
}

/// Logistic regression of the outcome on the augmented covariates of a cohort.
pub fn fit_logistic<T: Scalar>(cohort: &Cohort<T>, offset: Option<&[T]>) -> Result<LogisticFit<T>> {
    let rows: Vec<Vec<T>> = cohort.iter().map(|r| r.z.augmented().to_vec()).collect();
    let y: Vec<T> = cohort.iter().map(|r| r.y_scalar()).collect();
    fit_logistic_rows(&rows, &y, offset, None, None, &SolverConfig::default())
}
