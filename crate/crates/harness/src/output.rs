//! `results.csv`, `manifest.json`, `summary.txt` and auxiliary tables.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::config::RunConfig;
use crate::experiments::{Aggregate, Check, ExperimentResult, FitRecord, Record};

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> OutputError + '_ {
    move |source| OutputError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Long-format rows: per-realization records, then per-L aggregates (`<metric>`, `<metric>_se`,
/// `<metric>_count`) with an empty realization column.
pub fn results_csv(result: &ExperimentResult) -> Result<Vec<u8>, OutputError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &result.records {
        w.serialize(r)?;
    }
    for a in &result.aggregates {
        for (suffix, value) in [("", a.mean), ("_se", a.std_error), ("_count", a.count as f64)] {
            w.serialize(Record {
                experiment: result.label,
                d: result.dim,
                side: a.side,
                realization: None,
                metric: format!("{}{suffix}", a.metric),
                value,
            })?;
        }
    }
    if result.records.is_empty() && result.aggregates.is_empty() {
        w.write_record(["experiment", "d", "L", "realization", "metric", "value"])?;
    }
    w.into_inner().map_err(|e| OutputError::Io {
        path: PathBuf::from("results.csv"),
        source: e.into_error(),
    })
}

fn table_csv(header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>, OutputError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.into_inner().map_err(|e| OutputError::Io {
        path: PathBuf::from("table.csv"),
        source: e.into_error(),
    })
}

fn fits_csv(fits: &[FitRecord]) -> Result<Vec<u8>, OutputError> {
    let header = ["metric", "model", "epsilon_exponent", "ci_low", "ci_high", "residual", "points"].map(String::from);
    let rows: Vec<Vec<String>> = fits
        .iter()
        .map(|f| {
            vec![
                f.metric.clone(),
                model_name(f),
                f.epsilon_exponent.to_string(),
                f.ci.0.to_string(),
                f.ci.1.to_string(),
                f.residual.to_string(),
                f.points.to_string(),
            ]
        })
        .collect();
    table_csv(&header, &rows)
}

fn model_name(f: &FitRecord) -> String {
    use homlab_core::fit::RateModel;
    match f.model {
        RateModel::PurePower => "pure-power".into(),
        RateModel::PowerWithSqrtLog => "power-with-sqrt-log".into(),
        RateModel::PowerWithLogPower { k } => format!("power-with-log-power(k={k})"),
    }
}

#[derive(Serialize)]
pub struct Manifest<'a> {
    pub artifact: &'static str,
    pub version: &'static str,
    pub experiment: &'static str,
    pub master_seed: u64,
    pub workers: usize,
    pub wall_seconds: f64,
    pub passed: bool,
    pub config: &'a RunConfig,
    pub reference: Option<&'a homlab_core::elliptic::HomogenizedMatrix>,
    pub mu: &'a [(usize, f64)],
    pub attempted: usize,
    pub excluded: usize,
    pub fits: &'a [FitRecord],
    pub checks: &'a [Check],
}

pub fn manifest<'a>(cfg: &'a RunConfig, result: &'a ExperimentResult) -> Manifest<'a> {
    Manifest {
        artifact: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        experiment: result.label,
        master_seed: cfg.seed,
        workers: rayon::current_num_threads(),
        wall_seconds: result.wall_seconds,
        passed: result.passed(),
        config: cfg,
        reference: result.reference.as_ref(),
        mu: &result.mu,
        attempted: result.attempted,
        excluded: result.excluded,
        fits: &result.fits,
        checks: &result.checks,
    }
}

fn aggregate_line(out: &mut String, a: &Aggregate) {
    let _ = writeln!(out, "  L={:<4} {:<28} {:>14.6e} +- {:.2e}  (n={})", a.side, a.metric, a.mean, a.std_error, a.count);
}

pub fn summary(cfg: &RunConfig, result: &ExperimentResult) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{} d={} sides={:?} seed={}", result.label, cfg.dim, cfg.sides, cfg.seed);
    let _ = writeln!(s, "realizations: {} attempted, {} excluded", result.attempted, result.excluded);
    if let Some(r) = &result.reference {
        let _ = writeln!(s, "reference a_hom: {:?}", r.entries());
    }
    if !result.aggregates.is_empty() {
        let _ = writeln!(s, "aggregates:");
        for a in &result.aggregates {
            aggregate_line(&mut s, a);
        }
    }
    if !result.fits.is_empty() {
        let _ = writeln!(s, "fits (exponent in eps = 1/L):");
        for f in &result.fits {
            let _ = writeln!(
                s,
                "  {:<20} {:<28} {:>8.4}  CI [{:.4}, {:.4}]  residual {:.3e}",
                f.metric,
                model_name(f),
                f.epsilon_exponent,
                f.ci.0,
                f.ci.1,
                f.residual
            );
        }
    }
    if !result.checks.is_empty() {
        let _ = writeln!(s, "checks:");
        for c in &result.checks {
            let status = match (c.passed, c.required) {
                (true, _) => "PASS",
                (false, true) => "FAIL",
                (false, false) => "WARN",
            };
            let _ = writeln!(s, "  [{status}] {}: {}", c.name, c.detail);
        }
    }
    let _ = writeln!(s, "overall: {}", if result.passed() { "PASS" } else { "FAIL" });
    let _ = writeln!(s, "wall time: {:.2} s", result.wall_seconds);
    s
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), OutputError> {
    let mut f = std::fs::File::create(path).map_err(io(path))?;
    f.write_all(bytes).map_err(io(path))
}

/// Writes every artifact of a run into `dir`, creating it if needed.
pub fn write_run(dir: &Path, cfg: &RunConfig, result: &ExperimentResult) -> Result<Vec<PathBuf>, OutputError> {
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let mut written = Vec::new();
    let mut put = |name: &str, bytes: &[u8]| -> Result<(), OutputError> {
        let path = dir.join(name);
        write_file(&path, bytes)?;
        written.push(path);
        Ok(())
    };
    put("results.csv", &results_csv(result)?)?;
    put("manifest.json", serde_json::to_string_pretty(&manifest(cfg, result))?.as_bytes())?;
    put("summary.txt", summary(cfg, result).as_bytes())?;
    if !result.fits.is_empty() {
        put("fits.csv", &fits_csv(&result.fits)?)?;
    }
    for t in &result.tables {
        put(&format!("{}.csv", t.name), &table_csv(&t.header, &t.rows)?)?;
    }
    Ok(written)
}
