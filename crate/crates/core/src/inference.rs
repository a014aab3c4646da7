//! Tests of `β = 0`: the efficient score test and Wald tests.

use std::fmt;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::estimators::{Estimate, EstimatorKind, SecondPhaseData};
use crate::linalg::Matrix;
use crate::logistic::{fit_logistic_rows, logistic, SolverConfig};
use crate::moments::MomentModel;
use crate::scalar::{dot, Scalar};

pub const LEVEL: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestMethod {
    Score,
    WaldNaive,
    WaldIpw,
    WaldPclValidate,
    WaldPclBoth,
}

impl TestMethod {
    /// Column order of the rejection-rate tables.
    pub const ALL: [TestMethod; 5] = [
        TestMethod::WaldNaive,
        TestMethod::WaldIpw,
        TestMethod::WaldPclBoth,
        TestMethod::WaldPclValidate,
        TestMethod::Score,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TestMethod::Score => "score",
            TestMethod::WaldNaive => "wald-naive",
            TestMethod::WaldIpw => "wald-ipw",
            TestMethod::WaldPclValidate => "wald-pcl-validate",
            TestMethod::WaldPclBoth => "wald-pcl-both",
        }
    }

    pub fn wald(kind: EstimatorKind) -> Self {
        match kind {
            EstimatorKind::Naive => TestMethod::WaldNaive,
            EstimatorKind::Ipw => TestMethod::WaldIpw,
            EstimatorKind::PclValidate => TestMethod::WaldPclValidate,
            EstimatorKind::PclBoth => TestMethod::WaldPclBoth,
        }
    }
}

impl fmt::Display for TestMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub method: TestMethod,
    pub statistic: f64,
    pub p_value: f64,
    pub reject_at_05: bool,
}

impl TestResult {
    fn new(method: TestMethod, statistic: f64) -> Self {
        let p_value = two_sided_p(statistic);
        Self {
            method,
            statistic,
            p_value,
            reject_at_05: p_value < LEVEL,
        }
    }
}

/// Two-sided standard normal tail probability.
pub fn two_sided_p(statistic: f64) -> f64 {
    erfc(statistic.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
}

/// Efficient score test.
///
/// `π̂` comes from the null logistic fit of `Y` on `Z` over the whole cohort;
/// `p̂₁ = P(Y=1 | Z, δ=1)` and `μ` are taken from the known plan, and the
/// conditional moments of `X` from `moments`.
pub fn score_test<T: Scalar>(data: &SecondPhaseData<T>, moments: &MomentModel<T>) -> Result<TestResult> {
    let records = data.records();
    let rows: Vec<Vec<T>> = records.iter().map(|r| r.base.z.augmented().to_vec()).collect();
    let y: Vec<T> = records.iter().map(|r| r.base.y_scalar()).collect();
    let null = fit_logistic_rows(&rows, &y, None, None, None, &SolverConfig::default())?;
    let alpha = &null.coefficients.theta;
    let plan = data.plan();
    let p = rows[0].len();

    let mut s_main = T::zero();
    let mut s_alpha = vec![T::zero(); p];
    let mut i_bb = T::zero();
    let mut i_ba = vec![T::zero(); p];
    let mut i_aa = Matrix::zeros(p, p);
    for (i, rec) in records.iter().enumerate() {
        let zt = &rows[i];
        let pi = logistic(dot(alpha, zt));
        let m = moments.eval(&rec.base)?;
        let resid = y[i] - pi;
        let w = pi * (T::one() - pi);
        let (e1, e0) = (plan.eta1[i], plan.eta0[i]);
        let den = e1 * pi + e0 * (T::one() - pi);
        let p1 = if den > T::zero() { e1 * pi / den } else { pi };

        s_main += resid * m.m1;
        if rec.delta == 1 {
            let x = rec.x.expect("validated");
            s_main += (y[i] - p1) * (x - m.m1);
        }
        for (acc, z) in s_alpha.iter_mut().zip(zt) {
            *acc += resid * *z;
        }
        i_bb += w * m.m1 * m.m1 + plan.mu[i] * p1 * (T::one() - p1) * m.variance();
        for (acc, z) in i_ba.iter_mut().zip(zt) {
            *acc += w * m.m1 * *z;
        }
        i_aa.add_outer(w, zt);
    }
    let proj = i_aa.solve(&i_ba).map_err(|_| Error::SingularInformation)?;
    let s_eff = s_main - dot(&proj, &s_alpha);
    let denom = i_bb - dot(&proj, &i_ba);
    if !(denom > T::zero()) || !denom.is_finite() {
        return Err(Error::SingularInformation);
    }
    let statistic = (s_eff / denom.sqrt()).as_f64();
    if !statistic.is_finite() {
        return Err(Error::SingularInformation);
    }
    Ok(TestResult::new(TestMethod::Score, statistic))
}

/// Wald test `β̂ / se(β̂)` for an estimate.
pub fn wald_test<T: Scalar>(est: &Estimate<T>) -> Result<TestResult> {
    let se = est.se_beta.as_f64();
    if !(se > 0.0) || !se.is_finite() {
        return Err(Error::DegenerateSe);
    }
    Ok(TestResult::new(TestMethod::wald(est.kind), est.beta().as_f64() / se))
}
