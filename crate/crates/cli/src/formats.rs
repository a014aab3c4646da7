//! File formats: cohort, moments, plan, indicator and predictor files.
//!
//! Probabilities are written with 17 significant digits so that reading a
//! file back reproduces the in-memory values exactly.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::Deserialize;
use twophase::design::CaseControlCounts;
use twophase::moments::PredictorKind;
use twophase::{Cohort, MomentModel, PhaseOneRecord, SamplingPlan, SchemeKind};

use crate::error::{CliError, CliResult};

/// Full-precision float for CSV fields.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn parse_f64(path: &Path, line: usize, field: &str, s: &str) -> CliResult<f64> {
    s.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| CliError::io(path, format!("line {line}: '{s}' is not a finite number in column {field}")))
}

fn parse_id(path: &Path, line: usize, s: &str) -> CliResult<u64> {
    s.trim()
        .parse::<u64>()
        .map_err(|_| CliError::io(path, format!("line {line}: '{s}' is not a valid id")))
}

fn reader(path: &Path) -> CliResult<csv::Reader<fs::File>> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::io(path, e))
}

fn check_header(path: &Path, rdr: &mut csv::Reader<fs::File>, expected: &[&str]) -> CliResult<()> {
    let header = rdr.headers().map_err(|e| CliError::io(path, e))?;
    let got: Vec<&str> = header.iter().collect();
    if got != expected {
        return Err(CliError::io(
            path,
            format!("expected header '{}', found '{}'", expected.join(","), got.join(",")),
        ));
    }
    Ok(())
}

fn records(path: &Path, rdr: &mut csv::Reader<fs::File>) -> CliResult<Vec<(usize, csv::StringRecord)>> {
    rdr.records()
        .enumerate()
        .map(|(k, r)| r.map(|r| (k + 2, r)).map_err(|e| CliError::io(path, e)))
        .collect()
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

/// Cohort CSV with header `id,y,z1,...,zd`.
pub fn read_cohort(path: &Path) -> CliResult<Cohort> {
    let mut rdr = reader(path)?;
    let header = rdr.headers().map_err(|e| CliError::io(path, e))?.clone();
    if header.len() < 2 || &header[0] != "id" || &header[1] != "y" {
        return Err(CliError::io(path, "header must start with 'id,y'"));
    }
    let d = header.len() - 2;
    let mut out = Vec::new();
    for (line, rec) in records(path, &mut rdr)? {
        let id = parse_id(path, line, &rec[0])?;
        let y = match rec[1].trim() {
            "0" => 0,
            "1" => 1,
            other => return Err(CliError::io(path, format!("line {line}: y must be 0 or 1, got '{other}'"))),
        };
        let z = (0..d)
            .map(|k| parse_f64(path, line, &header[k + 2], &rec[k + 2]))
            .collect::<CliResult<Vec<f64>>>()?;
        out.push(PhaseOneRecord::new(id, y, &z).map_err(|e| CliError::io(path, e))?);
    }
    Cohort::new(out).map_err(|e| CliError::io(path, e))
}

pub fn write_cohort(path: &Path, cohort: &Cohort) -> CliResult<()> {
    let mut s = String::from("id,y");
    for k in 1..=cohort.dim() {
        write!(s, ",z{k}").unwrap();
    }
    s.push('\n');
    for r in cohort.iter() {
        write!(s, "{},{}", r.id, r.y).unwrap();
        for z in r.z.covariates() {
            write!(s, ",{}", fmt_f64(*z)).unwrap();
        }
        s.push('\n');
    }
    write_file(path, &s)
}

/// Index of each cohort id, for aligning auxiliary files.
fn id_index(cohort: &Cohort) -> HashMap<u64, usize> {
    cohort.iter().enumerate().map(|(i, r)| (r.id, i)).collect()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinearBlock {
    coef: Vec<f64>,
    variance: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LogisticBlock {
    coef: Vec<f64>,
}

/// Moment configuration. Coefficients are on `(1, z1, ..., zd)`; a tabulated
/// model points to a CSV `id,m1,m2`, relative to the JSON file.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MomentsConfig {
    kind: PredictorKind,
    linear: Option<LinearBlock>,
    logistic: Option<LogisticBlock>,
    tabulated: Option<PathBuf>,
}

pub fn read_moments(path: &Path) -> CliResult<MomentModel> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let cfg: MomentsConfig = serde_json::from_str(&text).map_err(|e| CliError::io(path, e))?;
    let bad = |msg: &str| Err(CliError::io(path, msg));
    match (cfg.kind, cfg.linear, cfg.logistic, cfg.tabulated) {
        (PredictorKind::Continuous, Some(lin), None, None) => match lin.variance {
            Some(v) => MomentModel::linear(lin.coef, v).map_err(|e| CliError::io(path, e)),
            None => bad("a continuous linear model needs 'variance'"),
        },
        (PredictorKind::Binary, Some(lin), None, None) => {
            if lin.variance.is_some() {
                return bad("'variance' is implied for a binary predictor");
            }
            let coef = lin.coef;
            Ok(MomentModel::from_fn(PredictorKind::Binary, move |zt: &[f64]| {
                let m1 = if zt.len() == coef.len() {
                    zt.iter().zip(&coef).map(|(a, b)| a * b).sum()
                } else {
                    f64::NAN
                };
                (m1, m1)
            }))
        }
        (PredictorKind::Binary, None, Some(lg), None) => Ok(MomentModel::logistic(lg.coef)),
        (PredictorKind::Continuous, None, Some(_), None) => bad("a logistic model needs kind 'binary'"),
        (kind, None, None, Some(table)) => {
            let table_path = path.parent().unwrap_or(Path::new(".")).join(table);
            read_moment_table(&table_path, kind)
        }
        _ => bad("give exactly one of 'linear', 'logistic' or 'tabulated'"),
    }
}

fn read_moment_table(path: &Path, kind: PredictorKind) -> CliResult<MomentModel> {
    let mut rdr = reader(path)?;
    check_header(path, &mut rdr, &["id", "m1", "m2"])?;
    let mut table = HashMap::new();
    for (line, rec) in records(path, &mut rdr)? {
        let id = parse_id(path, line, &rec[0])?;
        let m1 = parse_f64(path, line, "m1", &rec[1])?;
        let m2 = parse_f64(path, line, "m2", &rec[2])?;
        if table.insert(id, (m1, m2)).is_some() {
            return Err(CliError::io(path, format!("line {line}: duplicate id {id}")));
        }
    }
    Ok(MomentModel::tabulated(kind, table))
}

pub const PLAN_COLUMNS: [&str; 6] = ["id", "pi_hat", "sigma_tilde_sq", "mu", "eta1", "eta0"];

/// Plan CSV: a `# key=value,...` header line, then one row per subject.
pub fn write_plan(path: &Path, cohort: &Cohort, plan: &SamplingPlan, pi_hat: Option<&[f64]>) -> CliResult<()> {
    let mut s = format!(
        "# scheme={},lambda={},target_fraction={},converged={}",
        plan.scheme,
        plan.lambda.map(fmt_f64).unwrap_or_else(|| "NA".into()),
        fmt_f64(plan.target_fraction),
        plan.converged
    );
    if let Some(cc) = plan.case_control {
        write!(s, ",cases={},controls={}", cc.cases, cc.controls).unwrap();
    }
    s.push('\n');
    s.push_str(&PLAN_COLUMNS.join(","));
    s.push('\n');
    let pi_hat = plan.pi_hat.as_deref().or(pi_hat);
    for (i, r) in cohort.iter().enumerate() {
        writeln!(
            s,
            "{},{},{},{},{},{}",
            r.id,
            fmt_opt(pi_hat.map(|p| p[i])),
            fmt_opt(plan.sigma_sq.as_ref().map(|v| v[i])),
            fmt_f64(plan.mu[i]),
            fmt_f64(plan.eta1[i]),
            fmt_f64(plan.eta0[i])
        )
        .unwrap();
    }
    write_file(path, &s)
}

fn plan_meta(path: &Path) -> CliResult<HashMap<String, String>> {
    let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut first = String::new();
    BufReader::new(file)
        .read_line(&mut first)
        .map_err(|e| CliError::io(path, e))?;
    let body = first
        .trim()
        .strip_prefix('#')
        .ok_or_else(|| CliError::io(path, "missing '# scheme=...' header line"))?;
    body.split(',')
        .map(|kv| {
            kv.trim()
                .split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| CliError::io(path, format!("malformed header entry '{kv}'")))
        })
        .collect()
}

/// Read a plan and align it with the cohort's record order.
pub fn read_plan(path: &Path, cohort: &Cohort) -> CliResult<SamplingPlan> {
    let meta = plan_meta(path)?;
    let get = |k: &str| meta.get(k).ok_or_else(|| CliError::io(path, format!("header lacks '{k}'")));
    let scheme: SchemeKind = get("scheme")?.parse().map_err(|e| CliError::io(path, e))?;
    let num = |k: &str| -> CliResult<Option<f64>> {
        match meta.get(k).map(String::as_str) {
            None | Some("NA") => Ok(None),
            Some(v) => parse_f64(path, 1, k, v).map(Some),
        }
    };
    let count = |k: &str| -> CliResult<usize> {
        get(k)?
            .parse()
            .map_err(|_| CliError::io(path, format!("'{k}' must be a count")))
    };
    let case_control = if scheme == SchemeKind::CaseControl {
        Some(CaseControlCounts {
            cases: count("cases")?,
            controls: count("controls")?,
        })
    } else {
        None
    };
    let target_fraction = num("target_fraction")?.ok_or_else(|| CliError::io(path, "header lacks 'target_fraction'"))?;
    let converged = meta.get("converged").is_none_or(|v| v == "true");

    let mut rdr = reader(path)?;
    check_header(path, &mut rdr, &PLAN_COLUMNS)?;
    let index = id_index(cohort);
    let n = cohort.n();
    let mut rows: Vec<Option<[Option<f64>; 5]>> = vec![None; n];
    for (line, rec) in records(path, &mut rdr)? {
        let id = parse_id(path, line, &rec[0])?;
        let i = *index
            .get(&id)
            .ok_or_else(|| CliError::io(path, format!("line {line}: id {id} is not in the cohort")))?;
        let mut vals = [None; 5];
        for (k, v) in vals.iter_mut().enumerate() {
            let field = &rec[k + 1];
            if !field.is_empty() {
                *v = Some(parse_f64(path, line, PLAN_COLUMNS[k + 1], field)?);
            }
        }
        if vals[2..].iter().any(Option::is_none) {
            return Err(CliError::io(path, format!("line {line}: mu, eta1 and eta0 are required")));
        }
        if rows[i].replace(vals).is_some() {
            return Err(CliError::io(path, format!("line {line}: duplicate id {id}")));
        }
    }
    let rows = rows
        .into_iter()
        .enumerate()
        .map(|(i, r)| r.ok_or_else(|| CliError::io(path, format!("no row for id {}", cohort.records()[i].id))))
        .collect::<CliResult<Vec<_>>>()?;
    let column = |k: usize| -> Option<Vec<f64>> { rows.iter().map(|r| r[k]).collect() };
    let all = |k: usize| rows.iter().map(|r| r[k].expect("checked")).collect::<Vec<f64>>();
    for r in &rows {
        if r[2..].iter().any(|v| !(0.0..=1.0).contains(&v.expect("checked"))) {
            return Err(CliError::io(path, "selection probabilities must lie in [0, 1]"));
        }
    }
    Ok(SamplingPlan {
        scheme,
        mu: all(2),
        eta1: all(3),
        eta0: all(4),
        pi_hat: column(0),
        sigma_sq: column(1),
        lambda: num("lambda")?,
        target_fraction,
        case_control,
        converged,
    })
}

/// Indicator CSV `id,delta`.
pub fn write_delta(path: &Path, cohort: &Cohort, delta: &[u8]) -> CliResult<()> {
    let mut s = String::from("id,delta\n");
    for (r, d) in cohort.iter().zip(delta) {
        writeln!(s, "{},{d}", r.id).unwrap();
    }
    write_file(path, &s)
}

pub fn read_delta(path: &Path, cohort: &Cohort) -> CliResult<Vec<u8>> {
    let mut rdr = reader(path)?;
    check_header(path, &mut rdr, &["id", "delta"])?;
    let index = id_index(cohort);
    let mut delta = vec![None; cohort.n()];
    for (line, rec) in records(path, &mut rdr)? {
        let id = parse_id(path, line, &rec[0])?;
        let i = *index
            .get(&id)
            .ok_or_else(|| CliError::io(path, format!("line {line}: id {id} is not in the cohort")))?;
        let d = match &rec[1] {
            "0" => 0u8,
            "1" => 1u8,
            other => return Err(CliError::io(path, format!("line {line}: delta must be 0 or 1, got '{other}'"))),
        };
        if delta[i].replace(d).is_some() {
            return Err(CliError::io(path, format!("line {line}: duplicate id {id}")));
        }
    }
    delta
        .into_iter()
        .enumerate()
        .map(|(i, d)| d.ok_or_else(|| CliError::io(path, format!("no row for id {}", cohort.records()[i].id))))
        .collect()
}

/// Predictor CSV `id,x`, holding exactly the selected subjects.
pub fn write_x(path: &Path, cohort: &Cohort, x: &[Option<f64>]) -> CliResult<()> {
    let mut s = String::from("id,x\n");
    for (r, v) in cohort.iter().zip(x) {
        if let Some(v) = v {
            writeln!(s, "{},{}", r.id, fmt_f64(*v)).unwrap();
        }
    }
    write_file(path, &s)
}

pub fn read_x(path: &Path, cohort: &Cohort, delta: &[u8]) -> CliResult<Vec<Option<f64>>> {
    let mut rdr = reader(path)?;
    check_header(path, &mut rdr, &["id", "x"])?;
    let index = id_index(cohort);
    let mut x = vec![None; cohort.n()];
    let mut seen = HashSet::new();
    for (line, rec) in records(path, &mut rdr)? {
        let id = parse_id(path, line, &rec[0])?;
        let i = *index
            .get(&id)
            .ok_or_else(|| CliError::io(path, format!("line {line}: id {id} is not in the cohort")))?;
        if delta[i] != 1 {
            return Err(CliError::io(path, format!("line {line}: id {id} was not selected")));
        }
        if !seen.insert(id) {
            return Err(CliError::io(path, format!("line {line}: duplicate id {id}")));
        }
        x[i] = Some(parse_f64(path, line, "x", &rec[1])?);
    }
    for (i, r) in cohort.iter().enumerate() {
        if delta[i] == 1 && x[i].is_none() {
            return Err(CliError::io(path, format!("no x row for selected id {}", r.id)));
        }
    }
    Ok(x)
}

pub fn write_text(path: &Path, contents: &str) -> CliResult<()> {
    write_file(path, contents)
}
