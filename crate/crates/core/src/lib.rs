//! Optimal second-phase sampling for two-phase case-control studies.
//!
//! The numeric code is generic over [`Scalar`] (`f64` and `f32`); the aliases
//! at the crate root fix the scalar to `f64`, which is what the simulation
//! harness and the command-line tool use.

// `!(x > 0)` is deliberate throughout: NaN has to fail these checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cohort;
pub mod design;
pub mod estimators;
pub mod inference;
pub mod error;
pub mod linalg;
pub mod logistic;
pub mod moments;
pub mod scalar;
pub mod simharness;
pub mod streams;

pub use error::{Error, Result};
pub use logistic::{fit_logistic, logistic, newton_solve, SolverConfig};
pub use moments::PredictorKind;
pub use scalar::Scalar;

pub type Cohort = cohort::Cohort<f64>;
pub type PhaseOneRecord = cohort::PhaseOneRecord<f64>;
pub type Coefficients = cohort::Coefficients<f64>;
pub type MomentModel = moments::MomentModel<f64>;
pub type Matrix = linalg::Matrix<f64>;

pub type CohortF32 = cohort::Cohort<f32>;
pub type MomentModelF32 = moments::MomentModel<f32>;
pub type SamplingPlan = design::SamplingPlan<f64>;
pub type PiEstimate = design::PiEstimate<f64>;
pub use design::{DesignConfig, SchemeKind, SelectionIndicators};

pub type SecondPhaseData = estimators::SecondPhaseData<f64>;
pub type Estimate = estimators::Estimate<f64>;
pub type RHatModel = estimators::RHatModel<f64>;
pub use estimators::EstimatorKind;
pub use inference::{TestMethod, TestResult};
pub use simharness::{ErrorMetric, ScenarioConfig, Setting, SummaryTable};
