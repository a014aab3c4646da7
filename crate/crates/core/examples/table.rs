//! Print one block of the simulation tables.
//!
//! `cargo run --release --example table -- <setting> <N> <event-rate> <beta-x> <runs> [seed] [schemes]`

use std::env;

use twophase::simharness::{run_mc, ErrorMetric, Intercept, ScenarioConfig, Setting, SummaryTable};
use twophase::{EstimatorKind, TestMethod};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = env::args().skip(1).collect();
    let arg = |i: usize, default: &str| args.get(i).cloned().unwrap_or_else(|| default.to_string());
    let setting: Setting = arg(0, "1").parse()?;
    let mut cfg = ScenarioConfig::new(setting, arg(1, "60").parse()?);
    cfg.intercept = Intercept::EventRate(arg(2, &setting.default_event_rate().to_string()).parse()?);
    cfg.beta_x = arg(3, &setting.default_beta_x().to_string()).parse()?;
    cfg.n_runs = arg(4, "50").parse()?;
    cfg.base_seed = arg(5, "1").parse()?;
    if let Some(list) = args.get(6) {
        cfg.schemes = list.split(',').map(str::parse).collect::<Result<_, _>>()?;
    }

    let start = std::time::Instant::now();
    let (runs, summary) = run_mc(&cfg, ErrorMetric::MeanAbs)?;
    println!("{:<14}{:>9}{:>9}{:>9}{:>9}", "", "naive", "ipw", "pclboth", "pclval");
    for &scheme in &cfg.schemes {
        print!("{:<14}", scheme.as_str());
        for est in EstimatorKind::ALL {
            let cell = summary.estimation_cell(scheme, est).expect("cell");
            print!("{:>9}", format!("{}/{}", SummaryTable::render(cell), cell.failures));
        }
        println!();
    }
    println!("{:<14}{:>7}{:>7}{:>7}{:>7}{:>7}", "", "naive", "ipw", "both", "val", "score");
    for &scheme in &cfg.schemes {
        print!("{:<14}", scheme.as_str());
        for m in TestMethod::ALL {
            print!("{:>7.2}", summary.test_cell(scheme, m).expect("cell").rejection_rate);
        }
        println!();
    }
    let mut reasons = std::collections::BTreeMap::new();
    for o in runs.iter().flat_map(|r| &r.estimates) {
        if let Some(f) = &o.failure {
            *reasons.entry((o.scheme.as_str(), o.estimator.as_str(), f.as_str())).or_insert(0) += 1;
        }
    }
    for cell in &summary.estimation {
        eprintln!("{} {} max error {:?}", cell.scheme, cell.estimator, cell.max_error);
    }
    for ((s, e, f), k) in reasons {
        eprintln!("{s} {e} {f}: {k}");
    }
    eprintln!("{:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
