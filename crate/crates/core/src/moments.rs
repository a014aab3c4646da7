//! Prior knowledge about the expensive predictor: its first two conditional
//! moments given the phase-one covariates.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, PhaseOneRecord};
use crate::error::{Error, Result};
use crate::logistic::{fit_logistic_rows, logistic, SolverConfig};
use crate::linalg::Matrix;
use crate::scalar::{dot, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictorKind {
    Continuous,
    Binary,
}

/// `E(X | Z)` and `E(X² | Z)` at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments<T> {
    pub m1: T,
    pub m2: T,
}

impl<T: Scalar> Moments<T> {
    /// `Var(X | Z) = m2 − m1²`, never negative once validated.
    pub fn variance(&self) -> T {
        (self.m2 - self.m1 * self.m1).max(T::zero())
    }
}

type MomentFn<T> = Arc<dyn Fn(&[T]) -> (T, T) + Send + Sync>;

#[derive(Clone)]
pub enum MomentSource<T> {
    /// `E(X|Z) = z̃ᵀc` with constant residual variance.
    Linear { coef: Vec<T>, variance: T },
    /// `E(X|Z) = H(z̃ᵀc)` for a 0/1 predictor.
    Logistic { coef: Vec<T> },
    /// Per-subject values keyed by id.
    Tabulated(HashMap<u64, (T, T)>),
    /// Arbitrary function of the augmented covariates returning `(m1, m2)`.
    Function(MomentFn<T>),
}

impl<T: fmt::Debug> fmt::Debug for MomentSource<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MomentSource::Linear { coef, variance } => f
                .debug_struct("Linear")
                .field("coef", coef)
                .field("variance", variance)
                .finish(),
            MomentSource::Logistic { coef } => f.debug_struct("Logistic").field("coef", coef).finish(),
            MomentSource::Tabulated(m) => write!(f, "Tabulated({} entries)", m.len()),
            MomentSource::Function(_) => f.write_str("Function(..)"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MomentModel<T> {
    kind: PredictorKind,
    source: MomentSource<T>,
}

impl<T: Scalar> MomentModel<T> {
    pub fn linear(coef: Vec<T>, variance: T) -> Result<Self> {
        if variance < T::zero() || !variance.is_finite() {
            return Err(Error::InvalidInput("linear moment variance must be >= 0".into()));
        }
        Ok(Self {
            kind: PredictorKind::Continuous,
            source: MomentSource::Linear { coef, variance },
        })
    }

    pub fn logistic(coef: Vec<T>) -> Self {
        Self {
            kind: PredictorKind::Binary,
            source: MomentSource::Logistic { coef },
        }
    }

    pub fn tabulated(kind: PredictorKind, table: HashMap<u64, (T, T)>) -> Self {
        Self {
            kind,
            source: MomentSource::Tabulated(table),
        }
    }

    pub fn from_fn<F>(kind: PredictorKind, f: F) -> Self
    where
        F: Fn(&[T]) -> (T, T) + Send + Sync + 'static,
    {
        Self {
            kind,
            source: MomentSource::Function(Arc::new(f)),
        }
    }

    pub fn kind(&self) -> PredictorKind {
        self.kind
    }

    pub fn source(&self) -> &MomentSource<T> {
        &self.source
    }

    fn raw(&self, rec: &PhaseOneRecord<T>) -> Result<(T, T)> {
        let zt = rec.z.augmented();
        let coef_len = |c: &[T]| {
            if c.len() != zt.len() {
                Err(Error::InvalidInput(format!(
                    "moment coefficients have length {}, expected {}",
                    c.len(),
                    zt.len()
                )))
            } else {
                Ok(())
            }
        };
        Ok(match &self.source {
            MomentSource::Linear { coef, variance } => {
                coef_len(coef)?;
                let m1 = dot(coef, zt);
                (m1, *variance + m1 * m1)
            }
            MomentSource::Logistic { coef } => {
                coef_len(coef)?;
                let p = logistic(dot(coef, zt));
                (p, p)
            }
            MomentSource::Tabulated(table) => *table
                .get(&rec.id)
                .ok_or_else(|| Error::InvalidInput(format!("no tabulated moments for id {}", rec.id)))?,
            MomentSource::Function(f) => f(zt),
        })
    }

    /// Evaluate at one record, enforcing the moment invariants.
    pub fn eval(&self, rec: &PhaseOneRecord<T>) -> Result<Moments<T>> {
        let (m1, m2) = self.raw(rec)?;
        if !m1.is_finite() || !m2.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite moments for id {}", rec.id)));
        }
        let slack = T::lit(1e-10) * (T::one() + m2.abs());
        if self.kind == PredictorKind::Binary
            && (m1 < -slack || m1 > T::one() + slack || (m2 - m1).abs() > slack) {
                return Err(Error::InvalidInput(format!(
                    "binary moments at id {} need 0 <= m1 <= 1 and m2 = m1",
                    rec.id
                )));
            }
        if m2 - m1 * m1 < -slack {
            return Err(Error::InvalidInput(format!(
                "negative conditional variance at id {}",
                rec.id
            )));
        }
        Ok(Moments { m1, m2 })
    }

    pub fn eval_cohort(&self, cohort: &Cohort<T>) -> Result<Vec<Moments<T>>> {
        cohort.iter().map(|r| self.eval(r)).collect()
    }

    /// Fit the closed-form representation from a pilot sample where `x` is
    /// fully observed: least squares with homoscedastic variance for a
    /// continuous predictor, logistic regression for a binary one.
    pub fn fit_pilot(kind: PredictorKind, pilot: &Cohort<T>, x: &[T]) -> Result<Self> {
        if x.len() != pilot.n() {
            return Err(Error::InvalidInput("pilot predictor length mismatch".into()));
        }
        let rows: Vec<Vec<T>> = pilot.iter().map(|r| r.z.augmented().to_vec()).collect();
        match kind {
            PredictorKind::Continuous => {
                let (coef, variance) = ols(&rows, x)?;
                Self::linear(coef, variance)
            }
            PredictorKind::Binary => {
                let fit = fit_logistic_rows(&rows, x, None, None, None, &SolverConfig::default())?;
                Ok(Self::logistic(fit.coefficients.theta))
            }
        }
    }
}

/// Ordinary least squares; returns coefficients and the residual variance
/// with `n − p` degrees of freedom.
pub(crate) fn ols<T: Scalar>(rows: &[Vec<T>], y: &[T]) -> Result<(Vec<T>, T)> {
    let n = rows.len();
    let p = rows.first().map_or(0, Vec::len);
    if n <= p {
        return Err(Error::SingularDesign);
    }
    let mut xtx = Matrix::zeros(p, p);
    let mut xty = vec![T::zero(); p];
    for (row, &yi) in rows.iter().zip(y) {
        xtx.add_outer(T::one(), row);
        for (acc, v) in xty.iter_mut().zip(row) {
            *acc += *v * yi;
        }
    }
    let coef = xtx.solve(&xty).map_err(|_| Error::SingularDesign)?;
    let rss: T = rows
        .iter()
        .zip(y)
        .map(|(row, &yi)| {
            let r = yi - dot(row, &coef);
            r * r
        })
        .sum();
    Ok((coef, rss / T::from_usize_lossy(n - p)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: u64, z: f64) -> PhaseOneRecord<f64> {
        PhaseOneRecord::new(id, 0, &[z]).unwrap()
    }

    #[test]
    fn linear_and_logistic_moments() {
        let lin = MomentModel::linear(vec![1.0, 2.0], 0.5).unwrap();
        let m = lin.eval(&rec(1, 3.0)).unwrap();
        assert_eq!(m.m1, 7.0);
        assert!((m.variance() - 0.5).abs() < 1e-12);

        let logit = MomentModel::logistic(vec![0.0, 0.0]);
        let m = logit.eval(&rec(1, 3.0)).unwrap();
        assert_eq!((m.m1, m.m2), (0.5, 0.5));
    }

    #[test]
    fn invariant_violations_are_errors() {
        let neg = MomentModel::from_fn(PredictorKind::Continuous, |_z: &[f64]| (1.0, 0.5));
        assert!(matches!(neg.eval(&rec(1, 0.0)), Err(Error::InvalidInput(_))));
        let bad_binary = MomentModel::from_fn(PredictorKind::Binary, |_z: &[f64]| (0.3, 0.4));
        assert!(bad_binary.eval(&rec(1, 0.0)).is_err());
        let out_of_range = MomentModel::from_fn(PredictorKind::Binary, |_z: &[f64]| (1.3, 1.3));
        assert!(out_of_range.eval(&rec(1, 0.0)).is_err());
        let missing = MomentModel::<f64>::tabulated(PredictorKind::Continuous, HashMap::new());
        assert!(missing.eval(&rec(9, 0.0)).is_err());
    }

    #[test]
    fn ols_recovers_exact_line() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![1.0, i as f64]).collect();
        let y: Vec<f64> = (0..10).map(|i| 2.0 - 0.5 * i as f64).collect();
        let (coef, var) = ols(&rows, &y).unwrap();
        assert!((coef[0] - 2.0).abs() < 1e-12 && (coef[1] + 0.5).abs() < 1e-12);
        assert!(var.abs() < 1e-20);
    }
}
