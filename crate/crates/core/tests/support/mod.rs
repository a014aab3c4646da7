//! Fixtures and independent oracles shared by the integration tests.
//!
//! Every check returns `Ok(summary)` or `Err(reason)` so the same code can back
//! a plain `#[test]` and a line of the acceptance report.

#![allow(dead_code)]

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use twophase::cohort::{Cohort, PhaseOneRecord};
use twophase::design::{
    draw_indicators, estimate_pi, eta_from_mu, kt_update, proposed_plan, testlocal_plan, DesignConfig,
    DesignContext, PiEstimate, SamplingPlan, SchemeKind,
};
use twophase::estimators::{
    naive_fit, pcl_both_fit, pcl_both_jacobian, pcl_both_residual, pcl_validate_fit,
    pcl_validate_information, pcl_validate_residual, var_beta_pclvalidate, SecondPhaseData,
};
use twophase::moments::{MomentModel, PredictorKind};
use twophase::SelectionIndicators;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn logistic(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

/// Random cohort with `d` covariates (alternating normal and 0/1), a
/// logistic outcome with roughly `rate` cases, and a logistic moment model.
pub struct RandomCohort {
    pub cohort: Cohort<f64>,
    pub moments: MomentModel<f64>,
    pub x: Vec<f64>,
    pub pi: PiEstimate<f64>,
}

pub fn random_cohort(seed: u64, n: usize, d: usize, beta_x: f64) -> RandomCohort {
    let mut r = rng(seed);
    let x_coef: Vec<f64> = (0..=d).map(|_| r.random_range(-1.0..1.0)).collect();
    let y_coef: Vec<f64> = (0..d).map(|_| r.random_range(-0.7..0.7)).collect();
    let mut records = Vec::with_capacity(n);
    let mut x = Vec::with_capacity(n);
    for i in 0..n {
        let z: Vec<f64> = (0..d)
            .map(|k| {
                if k % 2 == 0 {
                    StandardNormal.sample(&mut r)
                } else if r.random::<f64>() < 0.4 {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let px = logistic(x_coef[0] + z.iter().zip(&x_coef[1..]).map(|(a, b)| a * b).sum::<f64>());
        let xi = if r.random::<f64>() < px { 1.0 } else { 0.0 };
        let lin = -1.6 + z.iter().zip(&y_coef).map(|(a, b)| a * b).sum::<f64>() + beta_x * xi;
        let y = u8::from(r.random::<f64>() < logistic(lin));
        records.push(PhaseOneRecord::new(i as u64 + 1, y, &z).unwrap());
        x.push(xi);
    }
    let cohort = Cohort::new(records).unwrap();
    let pi = estimate_pi(&cohort).unwrap();
    RandomCohort {
        cohort,
        moments: MomentModel::logistic(x_coef),
        x,
        pi,
    }
}

/// Plan with arbitrary outcome-dependent probabilities, for estimator tests.
pub fn random_eta_plan(seed: u64, n: usize) -> SamplingPlan<f64> {
    let mut r = rng(seed ^ 0x5eed);
    let eta1: Vec<f64> = (0..n).map(|_| r.random_range(0.5..1.0)).collect();
    let eta0: Vec<f64> = (0..n).map(|_| r.random_range(0.15..0.6)).collect();
    SamplingPlan {
        scheme: SchemeKind::Proposed,
        mu: eta1.iter().zip(&eta0).map(|(a, b)| 0.5 * (a + b)).collect(),
        eta1,
        eta0,
        pi_hat: None,
        sigma_sq: None,
        lambda: None,
        target_fraction: 0.5,
        case_control: None,
        converged: true,
    }
}

/// A randomized second-phase instance (binary or continuous predictor).
pub fn random_instance(seed: u64, continuous: bool) -> SecondPhaseData<f64> {
    let rc = random_cohort(seed, 500, 2, 0.8);
    let plan = random_eta_plan(seed, rc.cohort.n());
    let sel = draw_indicators(&plan, &rc.cohort, seed).unwrap();
    let (x, kind) = if continuous {
        let mut r = rng(seed ^ 0xc0ff);
        let x: Vec<f64> = rc
            .x
            .iter()
            .zip(rc.cohort.iter())
            .map(|(xb, rec)| {
                let e: f64 = StandardNormal.sample(&mut r);
                0.8 * xb + 0.3 * rec.z.covariates()[0] + 0.5 * e
            })
            .collect();
        (x, PredictorKind::Continuous)
    } else {
        (rc.x.clone(), PredictorKind::Binary)
    };
    SecondPhaseData::reveal(&rc.cohort, &plan, &sel, &x, kind).unwrap()
}

/// Two covariate atoms (`Z = 0` and `Z = 1`) with fixed case counts and
/// binary-predictor moments, so every quantity has a closed form.
pub struct TwoAtom {
    pub cohort: Cohort<f64>,
    pub moments: MomentModel<f64>,
    pub pi: PiEstimate<f64>,
    /// Records per atom.
    pub sizes: [usize; 2],
    /// `E(X|Z)` per atom.
    pub m1: [f64; 2],
}

pub fn two_atom() -> TwoAtom {
    let sizes = [60usize, 40];
    let cases = [6usize, 8];
    let m1 = [0.5, 0.1];
    let mut records = Vec::new();
    let mut table = HashMap::new();
    let mut id = 1u64;
    for atom in 0..2 {
        for k in 0..sizes[atom] {
            let y = u8::from(k < cases[atom]);
            records.push(PhaseOneRecord::new(id, y, &[atom as f64]).unwrap());
            table.insert(id, (m1[atom], m1[atom]));
            id += 1;
        }
    }
    let cohort = Cohort::new(records).unwrap();
    let pi = estimate_pi(&cohort).unwrap();
    TwoAtom {
        cohort,
        moments: MomentModel::tabulated(PredictorKind::Binary, table),
        pi,
        sizes,
        m1,
    }
}

impl TwoAtom {
    fn atom_of(&self, i: usize) -> usize {
        usize::from(i >= self.sizes[0])
    }

    pub fn atom_pi(&self, atom: usize) -> f64 {
        let idx = if atom == 0 { 0 } else { self.sizes[0] };
        self.pi.pi[idx]
    }

    /// Mean `μ` per atom.
    pub fn atom_mu(&self, mu: &[f64]) -> [f64; 2] {
        let mut acc = [0.0; 2];
        for (i, m) in mu.iter().enumerate() {
            acc[self.atom_of(i)] += m;
        }
        [acc[0] / self.sizes[0] as f64, acc[1] / self.sizes[1] as f64]
    }

    /// Brute-force maximiser of the efficient information over the grid of
    /// per-atom allocations meeting the size constraint. With two atoms the
    /// regression on `(1, Z)` is saturated, so the information is the sum of
    /// `(n_a/n) · w(μ_a) · Var(X|Z=a)` where `w` is the best `μ H₊(1−H₊)`,
    /// maximised over `η₁` directly on a grid.
    pub fn grid_optimum(&self, target: f64) -> [f64; 2] {
        let n = (self.sizes[0] + self.sizes[1]) as f64;
        let share = [self.sizes[0] as f64 / n, self.sizes[1] as f64 / n];
        let best_weight = |mu: f64, pi: f64| -> f64 {
            // maximise μ h (1 − h), h = η₁π/μ, over feasible η₁
            if mu <= 0.0 {
                return 0.0;
            }
            let lo = ((mu - (1.0 - pi)) / pi).max(0.0);
            let hi = (mu / pi).min(1.0);
            (0..=400)
                .map(|k| {
                    let e1 = lo + (hi - lo) * k as f64 / 400.0;
                    let h = e1 * pi / mu;
                    mu * h * (1.0 - h)
                })
                .fold(0.0, f64::max)
        };
        let value = |mu: [f64; 2]| -> f64 {
            (0..2)
                .map(|a| share[a] * best_weight(mu[a], self.atom_pi(a)) * self.m1[a] * (1.0 - self.m1[a]))
                .sum()
        };
        let mut best = ([0.0, 0.0], f64::NEG_INFINITY);
        let steps = 4000;
        for k in 0..=steps {
            let mu0 = k as f64 / steps as f64;
            let mu1 = (target - share[0] * mu0) / share[1];
            if !(0.0..=1.0).contains(&mu1) {
                continue;
            }
            let v = value([mu0, mu1]);
            if v > best.1 {
                best = ([mu0, mu1], v);
            }
        }
        best.0
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn check_mu_identity() -> Result<String, String> {
    let mut r = rng(11);
    let mut worst = 0.0_f64;
    for _ in 0..1000 {
        let pi: f64 = r.random_range(1e-4..0.4999);
        let mu: f64 = r.random_range(0.0..=1.0);
        let (e1, e0) = eta_from_mu(mu, pi);
        if !(0.0..=1.0).contains(&e1) || !(0.0..=1.0).contains(&e0) {
            return Err(format!("eta outside [0,1] at mu={mu}, pi={pi}"));
        }
        worst = worst.max((e1 * pi + e0 * (1.0 - pi) - mu).abs());
    }
    if worst <= 1e-10 {
        Ok(format!("max |eta1 pi + eta0 (1-pi) - mu| = {worst:.1e}"))
    } else {
        Err(format!("identity error {worst:.3e}"))
    }
}

/// Per-subject Lagrangian `σ̃² · w(μ) − λ μ` with `w(μ) = μ/4` up to `2π` and
/// `π − π²/μ` beyond; the allocation rule must maximise it.
fn subject_lagrangian(s2: f64, pi: f64, lambda: f64, mu: f64) -> f64 {
    let w = if mu <= 0.0 {
        0.0
    } else if mu <= 2.0 * pi {
        mu / 4.0
    } else {
        pi - pi * pi / mu
    };
    s2 * w - lambda * mu
}

pub fn check_kt_grid() -> Result<String, String> {
    let mut cases = 0;
    for &s2 in &[0.01, 0.09, 0.16, 0.25, 1.0, 4.0] {
        for &pi in &[0.01, 0.05, 0.1, 0.25, 0.4, 0.49] {
            let quarter = s2 / 4.0;
            let corner = s2 * pi * pi;
            let mut lambdas = vec![quarter, corner, quarter * 1.001, quarter * 0.999, corner * 1.001, corner * 0.999];
            lambdas.extend((1..40).map(|k| corner * 0.5 + (quarter * 1.5 - corner * 0.5) * k as f64 / 40.0));
            for lambda in lambdas {
                cases += 1;
                let mu = kt_update(s2, pi, lambda);
                let expected = if lambda > quarter {
                    0.0
                } else if lambda <= corner {
                    1.0
                } else {
                    s2.sqrt() * pi / lambda.sqrt()
                };
                if (mu - expected).abs() > 1e-12 {
                    return Err(format!("s2={s2} pi={pi} lambda={lambda}: got {mu}, want {expected}"));
                }
                let got = subject_lagrangian(s2, pi, lambda, mu);
                let best = (0..=20_000)
                    .map(|k| subject_lagrangian(s2, pi, lambda, k as f64 / 20_000.0))
                    .fold(f64::NEG_INFINITY, f64::max);
                if got < best - 1e-9 {
                    return Err(format!("s2={s2} pi={pi} lambda={lambda}: not a maximiser"));
                }
            }
            if (kt_update(s2, pi, quarter) - 2.0 * pi).abs() > 1e-12 {
                return Err(format!("tie at s2/4 should give 2 pi (s2={s2}, pi={pi})"));
            }
            if kt_update(s2, pi, corner) != 1.0 {
                return Err(format!("lambda = s2 pi^2 should give 1 (s2={s2}, pi={pi})"));
            }
        }
    }
    Ok(format!("{cases} grid points"))
}

pub fn check_lambda_search() -> Result<String, String> {
    let cfg = DesignConfig::default();
    let mut worst = 0.0_f64;
    for k in 0..20u64 {
        let mut r = rng(100 + k);
        let n = r.random_range(80..260);
        let d = r.random_range(1..4);
        let rc = random_cohort(200 + k, n, d, 1.0);
        let target = r.random_range(0.05..0.8);
        let plan = proposed_plan(&rc.cohort, &rc.moments, &rc.pi, target, &cfg, k)
            .map_err(|e| format!("cohort {k}: {e}"))?;
        let local = testlocal_plan(&rc.cohort, &rc.moments, &rc.pi, target, &cfg)
            .map_err(|e| format!("cohort {k}: {e}"))?;
        for p in [&plan, &local] {
            let gap = (p.mean_mu() - target).abs();
            worst = worst.max(gap);
            if gap > 1e-4 {
                return Err(format!("cohort {k} ({}): mean mu off target by {gap:.2e}", p.scheme));
            }
        }
    }
    let atoms = two_atom();
    for target in [0.1, 0.25, 0.45] {
        for plan in [
            proposed_plan(&atoms.cohort, &atoms.moments, &atoms.pi, target, &cfg, 3),
            testlocal_plan(&atoms.cohort, &atoms.moments, &atoms.pi, target, &cfg),
        ] {
            let plan = plan.map_err(|e| format!("two-atom fixture: {e}"))?;
            let gap = (plan.mean_mu() - target).abs();
            worst = worst.max(gap);
            if gap > 1e-4 {
                return Err(format!("two-atom fixture at {target}: off by {gap:.2e}"));
            }
        }
    }
    Ok(format!("max |mean mu - target| = {worst:.1e} (20 cohorts + zero-crossing fixture)"))
}

pub fn check_unification() -> Result<String, String> {
    let cfg = DesignConfig::default();
    let mut worst_sigma = 0.0_f64;
    let mut worst_plan = 0.0_f64;
    for k in 0..5u64 {
        let rc = random_cohort(300 + k, 200, 2, 1.0);
        let linear = MomentModel::linear(vec![0.3, -0.5, 0.8], 0.7 + 0.1 * k as f64).unwrap();
        let ctx = DesignContext::new(&rc.cohort, &linear, &rc.pi).unwrap();
        let mut r = rng(400 + k);
        let mu: Vec<f64> = (0..rc.cohort.n()).map(|_| r.random::<f64>()).collect();
        let st = ctx.sigma_tilde(&mu).unwrap();
        let var = ctx.conditional_variance();
        worst_sigma = worst_sigma.max(max_abs_diff(&st, &var));
        let target = 0.2 + 0.1 * k as f64;
        let a = proposed_plan(&rc.cohort, &linear, &rc.pi, target, &cfg, k).unwrap();
        let b = testlocal_plan(&rc.cohort, &linear, &rc.pi, target, &cfg).unwrap();
        worst_plan = worst_plan.max(max_abs_diff(&a.mu, &b.mu));
        worst_plan = worst_plan.max(max_abs_diff(&a.eta1, &b.eta1));
        worst_plan = worst_plan.max(max_abs_diff(&a.eta0, &b.eta0));
    }
    if worst_sigma <= 1e-8 && worst_plan <= 1e-6 {
        Ok(format!("sigma gap {worst_sigma:.1e}, plan gap {worst_plan:.1e}"))
    } else {
        Err(format!("sigma gap {worst_sigma:.3e}, plan gap {worst_plan:.3e}"))
    }
}

pub fn check_grid_oracle() -> Result<String, String> {
    let atoms = two_atom();
    let cfg = DesignConfig::default();
    let mut worst = 0.0_f64;
    for target in [0.1, 0.25, 0.45, 0.7] {
        let plan = proposed_plan(&atoms.cohort, &atoms.moments, &atoms.pi, target, &cfg, 5)
            .map_err(|e| e.to_string())?;
        let got = atoms.atom_mu(&plan.mu);
        let want = atoms.grid_optimum(target);
        let gap = max_abs_diff(&got, &want);
        worst = worst.max(gap);
        if gap > 0.01 {
            return Err(format!("target {target}: plan {got:?} vs grid {want:?}"));
        }
    }
    Ok(format!("max per-atom gap {worst:.1e}"))
}

pub fn check_plug_back() -> Result<String, String> {
    let mut worst_val = 0.0_f64;
    let mut worst_both = 0.0_f64;
    for k in 0..50u64 {
        let data = random_instance(500 + k, k % 2 == 1);
        let val = pcl_validate_fit(&data).map_err(|e| format!("instance {k}: {e}"))?;
        let res = pcl_validate_residual(&data, &val.theta.theta);
        worst_val = worst_val.max(res.iter().fold(0.0, |m, v| m.max(v.abs())));
        let both = pcl_both_fit(&data).map_err(|e| format!("instance {k}: {e}"))?;
        let res = pcl_both_residual(&data, &both.theta.theta).map_err(|e| e.to_string())?;
        worst_both = worst_both.max(res.iter().fold(0.0, |m, v| m.max(v.abs())));
    }
    let mut worst_naive = 0.0_f64;
    for k in 0..10u64 {
        let data = equal_eta(&random_instance(600 + k, k % 2 == 0), 0.4);
        let a = naive_fit(&data).map_err(|e| e.to_string())?;
        let b = pcl_validate_fit(&data).map_err(|e| e.to_string())?;
        worst_naive = worst_naive.max(max_abs_diff(&a.theta.theta, &b.theta.theta));
    }
    if worst_val <= 1e-8 && worst_both <= 1e-8 && worst_naive <= 1e-10 {
        Ok(format!(
            "residuals {worst_val:.1e} / {worst_both:.1e}; zero-offset gap {worst_naive:.1e}"
        ))
    } else {
        Err(format!(
            "residuals {worst_val:.3e} / {worst_both:.3e}; zero-offset gap {worst_naive:.3e}"
        ))
    }
}

/// Same records and selection, with every `η₁ = η₀ = eta`.
pub fn equal_eta(data: &SecondPhaseData<f64>, eta: f64) -> SecondPhaseData<f64> {
    let (cohort, delta, x) = unpack(data);
    let n = cohort.n();
    let plan = SamplingPlan {
        mu: vec![eta; n],
        eta1: vec![eta; n],
        eta0: vec![eta; n],
        ..data.plan().clone()
    };
    SecondPhaseData::new(&cohort, &plan, &SelectionIndicators::from_delta(delta, 0), &x, data.kind()).unwrap()
}

pub fn unpack(data: &SecondPhaseData<f64>) -> (Cohort<f64>, Vec<u8>, Vec<Option<f64>>) {
    let cohort = Cohort::new(data.records().iter().map(|r| r.base.clone()).collect()).unwrap();
    let delta = data.records().iter().map(|r| r.delta).collect();
    let x = data.records().iter().map(|r| r.x).collect();
    (cohort, delta, x)
}

pub fn check_jacobian() -> Result<String, String> {
    let mut worst = 0.0_f64;
    for k in 0..20u64 {
        let data = random_instance(700 + k, k % 2 == 0);
        let mut r = rng(800 + k);
        let p = data.dim() + 2;
        let theta: Vec<f64> = (0..p).map(|_| r.random_range(-1.0..1.0)).collect();
        let jac = pcl_both_jacobian(&data, &theta).map_err(|e| e.to_string())?;
        let scale = jac.max_abs().max(1.0);
        for j in 0..p {
            let h = 1e-6 * theta[j].abs().max(1.0);
            let mut up = theta.clone();
            let mut down = theta.clone();
            up[j] += h;
            down[j] -= h;
            let fu = pcl_both_residual(&data, &up).map_err(|e| e.to_string())?;
            let fd = pcl_both_residual(&data, &down).map_err(|e| e.to_string())?;
            for i in 0..p {
                let numeric = (fu[i] - fd[i]) / (2.0 * h);
                worst = worst.max((numeric - jac[(i, j)]).abs() / scale);
            }
        }
    }
    if worst <= 1e-5 {
        Ok(format!("max relative error {worst:.1e} over 20 points"))
    } else {
        Err(format!("relative error {worst:.3e}"))
    }
}

pub fn check_schur() -> Result<String, String> {
    let sim = twophase::simharness::generate_setting1(400, -3.0, 2.0, 9).map_err(|e| e.to_string())?;
    let pi = estimate_pi(&sim.cohort).map_err(|e| e.to_string())?;
    let plan = proposed_plan(&sim.cohort, &sim.moments, &pi, 0.3, &DesignConfig::default(), 9)
        .map_err(|e| e.to_string())?;
    let info = pcl_validate_information(&sim.cohort, &sim.moments, &pi, &plan).map_err(|e| e.to_string())?;
    if info.rows() != 8 {
        return Err(format!("expected an 8x8 matrix, got {}", info.rows()));
    }
    let full = info.inverse().map_err(|e| format!("{e:?}"))?[(7, 7)];
    let schur = var_beta_pclvalidate(&sim.cohort, &sim.moments, &pi, &plan).map_err(|e| e.to_string())?;
    let ctx = DesignContext::new(&sim.cohort, &sim.moments, &pi).map_err(|e| e.to_string())?;
    let objective = 1.0 / ctx.objective(&plan.mu).map_err(|e| e.to_string())?;
    let gap = (full - schur).abs() / full.abs();
    let gap_obj = (objective - schur).abs() / schur.abs();
    if gap <= 1e-8 && gap_obj <= 1e-8 {
        Ok(format!("relative gaps {gap:.1e} (inverse) and {gap_obj:.1e} (design objective)"))
    } else {
        Err(format!("relative gaps {gap:.3e} (inverse) and {gap_obj:.3e} (design objective)"))
    }
}

/// Every property of the suite, in report order.
pub fn property_suite() -> Vec<(&'static str, Result<String, String>)> {
    vec![
        ("mu identity", check_mu_identity()),
        ("KT grid", check_kt_grid()),
        ("lambda search", check_lambda_search()),
        ("unification", check_unification()),
        ("two-atom grid oracle", check_grid_oracle()),
        ("plug-back residuals", check_plug_back()),
        ("Jacobian", check_jacobian()),
        ("Schur complement", check_schur()),
    ]
}
