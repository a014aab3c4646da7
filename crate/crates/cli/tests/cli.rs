use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use tempfile::TempDir;
use twophase::simharness::{generate_setting1, GeneratorParams};
use twophase_cli::commands::Report;
use twophase_cli::formats;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn run(args: &[&str]) -> i32 {
    twophase_cli::run(std::iter::once("twophase").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn plan_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(2)
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

fn num(s: &str) -> f64 {
    s.parse().unwrap()
}

/// Keep the predictor values of the selected subjects.
fn write_selected_x(delta: &Path, full: &Path, out: &Path) {
    let selected: Vec<bool> = fs::read_to_string(delta)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.ends_with(",1"))
        .collect();
    let mut text = String::from("id,x\n");
    for (line, keep) in fs::read_to_string(full).unwrap().lines().skip(1).zip(selected) {
        if keep {
            text.push_str(line);
            text.push('\n');
        }
    }
    fs::write(out, text).unwrap();
}

#[test]
fn random_plan_is_flat() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("plan.csv");
    let cohort = fixture("synthetic_cohort.csv");
    assert_eq!(
        run(&["design", "--cohort", s(&cohort), "--scheme", "random", "--fraction", "0.3", "--out", s(&out)]),
        0
    );
    for row in plan_rows(&out) {
        for k in 3..6 {
            assert_eq!(num(&row[k]), 0.3);
        }
    }
}

#[test]
fn full_fraction_selects_everyone() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("plan.csv");
    let (cohort, moments) = (fixture("synthetic_cohort.csv"), fixture("synthetic_moments.json"));
    let args = [
        "design",
        "--cohort",
        s(&cohort),
        "--moments",
        s(&moments),
        "--fraction",
        "1.0",
        "--out",
        s(&out),
    ];
    assert_eq!(run(&args), 0);
    assert!(plan_rows(&out).iter().all(|r| num(&r[3]) == 1.0));

    let delta = dir.path().join("delta.csv");
    assert_eq!(
        run(&["select", "--plan", s(&out), "--cohort", s(&cohort), "--seed", "4", "--out", s(&delta)]),
        0
    );
    assert!(fs::read_to_string(&delta).unwrap().lines().skip(1).all(|l| l.ends_with(",1")));
}

#[test]
fn two_atom_plan_matches_grid_oracle() {
    let dir = TempDir::new().unwrap();
    let oracle = fs::read_to_string(fixture("two_atom_oracle.csv")).unwrap();
    let (cohort_path, moments) = (fixture("two_atom_cohort.csv"), fixture("two_atom_moments.json"));
    for line in oracle.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let (fraction, z, want) = (f[0], num(f[1]), num(f[2]));
        let out = dir.path().join(format!("plan_{fraction}.csv"));
        let args = [
            "design",
            "--cohort",
            s(&cohort_path),
            "--moments",
            s(&moments),
            "--fraction",
            fraction,
            "--out",
            s(&out),
        ];
        assert_eq!(run(&args), 0);
        let cohort = formats::read_cohort(&cohort_path).unwrap();
        let plan = formats::read_plan(&out, &cohort).unwrap();
        let mus: Vec<f64> = cohort
            .iter()
            .zip(&plan.mu)
            .filter(|(r, _)| r.z.covariates()[0] == z)
            .map(|(_, m)| *m)
            .collect();
        let mean = mus.iter().sum::<f64>() / mus.len() as f64;
        assert!((mean - want).abs() < 0.01, "fraction {fraction}, z={z}: {mean} vs {want}");
    }
}

#[test]
fn selection_is_reproducible_and_near_its_expected_size() {
    let dir = TempDir::new().unwrap();
    let sim = generate_setting1(400, -3.0, 2.0, 12).unwrap();
    let cohort = dir.path().join("cohort.csv");
    formats::write_cohort(&cohort, &sim.cohort).unwrap();
    let moments = dir.path().join("moments.json");
    let coef = GeneratorParams::standard(0.0, 2.0).x_coef;
    fs::write(&moments, format!(r#"{{"kind": "binary", "logistic": {{"coef": {coef:?}}}}}"#)).unwrap();
    let plan = dir.path().join("plan.csv");
    let args = ["design", "--cohort", s(&cohort), "--moments", s(&moments), "--fraction", "0.3", "--out", s(&plan)];
    assert_eq!(run(&args), 0);

    // Poisson-binomial mean and spread of the realized size
    let cohort_data = formats::read_cohort(&cohort).unwrap();
    let p = formats::read_plan(&plan, &cohort_data).unwrap();
    let probs: Vec<f64> = cohort_data.iter().enumerate().map(|(i, r)| p.eta_for(i, r.y)).collect();
    let mean: f64 = probs.iter().sum();
    let sd = probs.iter().map(|q| q * (1.0 - q)).sum::<f64>().sqrt();
    assert!(mean - 2.576 * sd >= 90.0 && mean + 2.576 * sd <= 150.0, "mean {mean}, sd {sd}");

    let mut inside = 0;
    let seeds = 200;
    for seed in 0..seeds {
        let out = dir.path().join("delta.csv");
        let seed = seed.to_string();
        assert_eq!(
            run(&["select", "--plan", s(&plan), "--cohort", s(&cohort), "--seed", &seed, "--out", s(&out)]),
            0
        );
        let count = fs::read_to_string(&out).unwrap().lines().filter(|l| l.ends_with(",1")).count();
        if (90..=150).contains(&count) {
            inside += 1;
        }
    }
    assert!(inside as f64 >= 0.99 * seeds as f64, "{inside}/{seeds} inside [90, 150]");

    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for out in [&a, &b] {
        assert_eq!(run(&["select", "--plan", s(&plan), "--cohort", s(&cohort), "--seed", "9", "--out", s(out)]), 0);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

/// Design, select and extract `x` for the synthetic fixture.
fn synthetic_pipeline(dir: &Path, plan_args: &[&str], seed: &str) -> (PathBuf, PathBuf, PathBuf) {
    let cohort = fixture("synthetic_cohort.csv");
    let plan = dir.join("plan.csv");
    let mut args = vec!["design", "--cohort", s(&cohort), "--out", s(&plan)];
    args.extend_from_slice(plan_args);
    assert_eq!(run(&args), 0);
    let delta = dir.join("delta.csv");
    assert_eq!(
        run(&["select", "--plan", s(&plan), "--cohort", s(&cohort), "--seed", seed, "--out", s(&delta)]),
        0
    );
    let x = dir.join("x.csv");
    write_selected_x(&delta, &fixture("synthetic_x_full.csv"), &x);
    (plan, delta, x)
}

fn read_report(path: &Path) -> Report {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn fully_observed_naive_and_validation_estimates_agree() {
    let dir = TempDir::new().unwrap();
    let (plan, delta, x) = synthetic_pipeline(dir.path(), &["--scheme", "random", "--fraction", "1.0"], "1");
    let out = dir.path().join("report.json");
    let cohort = fixture("synthetic_cohort.csv");
    let args = [
        "estimate", "--cohort", s(&cohort), "--delta", s(&delta), "--x", s(&x), "--plan", s(&plan),
        "--estimator", "naive,pcl-validate", "--out", s(&out),
    ];
    assert_eq!(run(&args), 0);
    let report = read_report(&out);
    assert_eq!(report.validation_count, 300);
    let beta = |k: usize| *report.estimates[k].theta.last().unwrap();
    assert!((beta(0) - beta(1)).abs() < 1e-8);
}

#[test]
fn missing_predictor_row_is_an_input_error() {
    let dir = TempDir::new().unwrap();
    let (plan, delta, x) = synthetic_pipeline(dir.path(), &["--scheme", "random", "--fraction", "0.4"], "2");
    let text = fs::read_to_string(&x).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines.remove(3);
    fs::write(&x, lines.join("\n") + "\n").unwrap();
    let out = dir.path().join("report.json");
    let cohort = fixture("synthetic_cohort.csv");
    let args = ["estimate", "--cohort", s(&cohort), "--delta", s(&delta), "--x", s(&x), "--plan", s(&plan), "--out", s(&out)];
    assert_eq!(run(&args), 2);
    assert!(!out.exists());
}

#[test]
fn estimator_failure_exits_3_and_keeps_the_rest() {
    let dir = TempDir::new().unwrap();
    let (plan, delta, x) = synthetic_pipeline(dir.path(), &["--scheme", "random", "--fraction", "0.4"], "3");
    // zero selection probability for a selected record breaks the weighting
    let selected = fs::read_to_string(&delta)
        .unwrap()
        .lines()
        .skip(1)
        .find(|l| l.ends_with(",1"))
        .map(|l| l.split(',').next().unwrap().to_string())
        .unwrap();
    let text = fs::read_to_string(&plan).unwrap();
    let patched: Vec<String> = text
        .lines()
        .map(|l| {
            if l.split(',').next() == Some(selected.as_str()) {
                let f: Vec<&str> = l.split(',').collect();
                format!("{},{},{},0,0,0", f[0], f[1], f[2])
            } else {
                l.to_string()
            }
        })
        .collect();
    fs::write(&plan, patched.join("\n") + "\n").unwrap();
    let out = dir.path().join("report.json");
    let cohort = fixture("synthetic_cohort.csv");
    let args = [
        "estimate", "--cohort", s(&cohort), "--delta", s(&delta), "--x", s(&x), "--plan", s(&plan),
        "--estimator", "naive,ipw", "--out", s(&out),
    ];
    assert_eq!(run(&args), 3);
    let report = read_report(&out);
    assert_eq!(report.estimates.len(), 1);
    assert_eq!(report.failures.len(), 1);
    assert_eq!(report.failures[0].error, "ZeroWeightProbability");
}

#[test]
fn synthetic_fixture_matches_golden_report() {
    let dir = TempDir::new().unwrap();
    let moments = fixture("synthetic_moments.json");
    let (plan, delta, x) = synthetic_pipeline(dir.path(), &["--moments", s(&moments), "--fraction", "0.3"], "5");
    let out = dir.path().join("report.json");
    let cohort = fixture("synthetic_cohort.csv");
    let args = [
        "estimate", "--cohort", s(&cohort), "--delta", s(&delta), "--x", s(&x), "--plan", s(&plan),
        "--moments", s(&moments), "--out", s(&out),
    ];
    assert_eq!(run(&args), 0);
    let got = read_report(&out);
    let want = read_report(&fixture("golden_report.json"));
    assert_eq!(got.validation_count, want.validation_count);
    assert_eq!(got.estimates.len(), want.estimates.len());
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-8 * (1.0 + b.abs());
    for (g, w) in got.estimates.iter().zip(&want.estimates) {
        assert_eq!(g.estimator, w.estimator);
        for (a, b) in g.theta.iter().zip(&w.theta) {
            assert!(close(*a, *b), "{}: {a} vs {b}", g.estimator);
        }
        assert!(close(g.se_beta, w.se_beta));
        assert!(close(g.p_value.unwrap(), w.p_value.unwrap()));
    }
    let (g, w) = (got.score_test.unwrap(), want.score_test.unwrap());
    assert!(close(g.statistic, w.statistic));
}

#[test]
fn plan_and_indicator_files_round_trip() {
    let dir = TempDir::new().unwrap();
    let moments = fixture("synthetic_moments.json");
    let (plan_path, delta_path, x_path) =
        synthetic_pipeline(dir.path(), &["--moments", s(&moments), "--fraction", "0.3"], "8");
    let cohort = formats::read_cohort(&fixture("synthetic_cohort.csv")).unwrap();
    let plan = formats::read_plan(&plan_path, &cohort).unwrap();
    let again = dir.path().join("again.csv");
    formats::write_plan(&again, &cohort, &plan, None).unwrap();
    assert_eq!(formats::read_plan(&again, &cohort).unwrap(), plan);
    assert_eq!(fs::read(&again).unwrap(), fs::read(&plan_path).unwrap());

    let delta = formats::read_delta(&delta_path, &cohort).unwrap();
    let x = formats::read_x(&x_path, &cohort, &delta).unwrap();
    let x2 = dir.path().join("x2.csv");
    formats::write_x(&x2, &cohort, &x).unwrap();
    assert_eq!(formats::read_x(&x2, &cohort, &delta).unwrap(), x);

    let c2 = dir.path().join("cohort.csv");
    formats::write_cohort(&c2, &cohort).unwrap();
    assert_eq!(formats::read_cohort(&c2).unwrap(), cohort);
}

#[test]
fn malformed_inputs_are_rejected() {
    let dir = TempDir::new().unwrap();
    let cohort = fixture("synthetic_cohort.csv");
    let plan = dir.path().join("plan.csv");

    let moments = dir.path().join("m.json");
    fs::write(&moments, r#"{"kind": "binary", "logistic": {"coef": [0, 1, 0]}, "extra": 1}"#).unwrap();
    assert_eq!(run(&["design", "--cohort", s(&cohort), "--moments", s(&moments), "--fraction", "0.3", "--out", s(&plan)]), 2);

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "id,y,z1\n1,2,0.5\n").unwrap();
    assert_eq!(run(&["design", "--cohort", s(&bad), "--scheme", "random", "--fraction", "0.3", "--out", s(&plan)]), 2);

    assert_eq!(run(&["design", "--cohort", s(&cohort), "--scheme", "random", "--fraction", "1.5", "--out", s(&plan)]), 2);
    assert_eq!(run(&["design", "--cohort", s(&cohort), "--scheme", "sideways", "--fraction", "0.3", "--out", s(&plan)]), 4);

    let config = dir.path().join("sim.json");
    fs::write(&config, r#"{"N": 60, "runs": 1, "colour": "red"}"#).unwrap();
    assert_eq!(run(&["simulate", "--config", s(&config), "--out", s(dir.path())]), 2);
    assert_eq!(run(&["simulate", "--N", "600", "--runs", "1", "--out", s(dir.path())]), 3);
}

#[test]
fn single_run_summary_equals_the_run() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("sim");
    let args = ["simulate", "--setting", "1", "--N", "100", "--runs", "1", "--seed", "3", "--schemes", "proposed,random", "--out", s(&out)];
    assert_eq!(run(&args), 0);
    let runs = fs::read_to_string(out.join("runs.csv")).unwrap();
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    let mut checked = 0;
    for line in runs.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f[4] != "estimate" || f[6].is_empty() {
            continue;
        }
        let err = (num(f[6]) - 2.0).abs();
        let key = format!("estimation,{},{},", f[2], f[5]);
        let row = summary.lines().find(|l| l.starts_with(&key)).unwrap();
        let value = num(row.split(',').nth(3).unwrap());
        assert!((value - err).abs() <= 1e-12 * (1.0 + err), "{key}: {value} vs {err}");
        checked += 1;
    }
    assert!(checked > 0);
}

#[test]
fn binary_reports_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_twophase");
    let status = Command::new(bin).arg("--help").output().unwrap().status;
    assert_eq!(status.code(), Some(0));
    let status = Command::new(bin).arg("design").output().unwrap().status;
    assert_eq!(status.code(), Some(4));
    let status = Command::new(bin)
        .args(["select", "--plan", "missing.csv", "--cohort", "missing.csv", "--out", "x.csv"])
        .output()
        .unwrap()
        .status;
    assert_eq!(status.code(), Some(2));
}
