//! Phase-one data: subjects with an observed binary outcome and covariates.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Covariates with a leading constant 1 so that an intercept is part of the
/// linear predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateVector<T> {
    z_tilde: Vec<T>,
}

impl<T: Scalar> CovariateVector<T> {
    /// Build from raw covariates `z`; the constant is prepended here.
    pub fn from_covariates(z: &[T]) -> Result<Self> {
        if let Some(bad) = z.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("covariate {bad} is not finite")));
        }
        let mut z_tilde = Vec::with_capacity(z.len() + 1);
        z_tilde.push(T::one());
        z_tilde.extend_from_slice(z);
        Ok(Self { z_tilde })
    }

    /// `(1, z₁, …, z_d)`
    pub fn augmented(&self) -> &[T] {
        &self.z_tilde
    }

    /// `(z₁, …, z_d)` without the constant.
    pub fn covariates(&self) -> &[T] {
        &self.z_tilde[1..]
    }

    /// Length of the augmented vector, `d + 1`.
    pub fn len(&self) -> usize {
        self.z_tilde.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseOneRecord<T> {
    pub id: u64,
    pub y: u8,
    pub z: CovariateVector<T>,
}

impl<T: Scalar> PhaseOneRecord<T> {
    pub fn new(id: u64, y: u8, z: &[T]) -> Result<Self> {
        if y > 1 {
            return Err(Error::InvalidInput(format!("record {id}: outcome {y} is not 0/1")));
        }
        Ok(Self {
            id,
            y,
            z: CovariateVector::from_covariates(z)?,
        })
    }

    pub fn y_scalar(&self) -> T {
        if self.y == 1 {
            T::one()
        } else {
            T::zero()
        }
    }
}

/// The phase-one sample. Record order is significant only for seeding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort<T> {
    records: Vec<PhaseOneRecord<T>>,
}

impl<T: Scalar> Cohort<T> {
    pub fn new(records: Vec<PhaseOneRecord<T>>) -> Result<Self> {
        let first = records
            .first()
            .ok_or_else(|| Error::InvalidInput("cohort is empty".into()))?;
        let width = first.z.len();
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if r.z.len() != width {
                return Err(Error::InvalidInput(format!(
                    "record {} has {} covariates, expected {}",
                    r.id,
                    r.z.len() - 1,
                    width - 1
                )));
            }
            if !seen.insert(r.id) {
                return Err(Error::InvalidInput(format!("duplicate id {}", r.id)));
            }
        }
        Ok(Self { records })
    }

    pub fn n(&self) -> usize {
        self.records.len()
    }

    /// Number of raw covariates `d`.
    pub fn dim(&self) -> usize {
        self.records[0].z.len() - 1
    }

    pub fn records(&self) -> &[PhaseOneRecord<T>] {
        &self.records
    }

    pub fn iter(&self) -> std::slice::Iter<'_, PhaseOneRecord<T>> {
        self.records.iter()
    }

    pub fn case_count(&self) -> usize {
        self.records.iter().filter(|r| r.y == 1).count()
    }

    pub fn control_count(&self) -> usize {
        self.n() - self.case_count()
    }

    /// Reorder records; `perm[k]` is the index of the record placed at `k`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.n());
        Self {
            records: perm.iter().map(|&i| self.records[i].clone()).collect(),
        }
    }
}

/// Regression coefficients with the position of the predictor effect recorded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficients<T> {
    pub theta: Vec<T>,
    pub beta_index: Option<usize>,
}

impl<T: Scalar> Coefficients<T> {
    pub fn new(theta: Vec<T>, beta_index: Option<usize>) -> Self {
        if let Some(b) = beta_index {
            assert!(b < theta.len(), "beta index out of range");
        }
        Self { theta, beta_index }
    }

    pub fn zeros(len: usize, beta_index: Option<usize>) -> Self {
        Self::new(vec![T::zero(); len], beta_index)
    }

    pub fn beta(&self) -> Option<T> {
        self.beta_index.map(|i| self.theta[i])
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn augmentation_prepends_one() {
        let z = CovariateVector::from_covariates(&[2.0, -1.0]).unwrap();
        assert_eq!(z.augmented(), &[1.0, 2.0, -1.0]);
        assert_eq!(z.covariates(), &[2.0, -1.0]);
    }

    #[test]
    fn rejects_bad_records() {
        assert!(PhaseOneRecord::new(1, 2, &[0.0]).is_err());
        assert!(CovariateVector::from_covariates(&[f64::NAN]).is_err());
        let a = PhaseOneRecord::new(1, 0, &[0.0]).unwrap();
        let b = PhaseOneRecord::new(1, 1, &[1.0]).unwrap();
        assert!(Cohort::new(vec![a.clone(), b]).is_err());
        let c = PhaseOneRecord::new(2, 1, &[1.0, 2.0]).unwrap();
        assert!(Cohort::new(vec![a, c]).is_err());
        assert!(Cohort::<f64>::new(vec![]).is_err());
    }
}
