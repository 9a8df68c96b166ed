use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::config::ExperimentConfig;
use super::experiment::{ExperimentResult, MetricsRow, RepetitionOutcome};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

pub const METRICS_HEADER: [&str; 8] = [
    "skill",
    "scenario",
    "algo",
    "success_rate",
    "avg_return",
    "avg_termination_episode",
    "euclid_disp_cm",
    "angular_disp_deg",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    #[serde(flatten)]
    pub result: ExperimentResult,
}

impl ExperimentReport {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let r: Self = serde_json::from_str(&s)?;
        if r.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                expected: REPORT_SCHEMA_VERSION,
                found: r.schema_version,
            });
        }
        Ok(r)
    }
}

/// Creates `dir` and proves it is writable.
pub fn check_output_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let probe = dir.join(".write_probe");
    fs::write(&probe, b"").map_err(|e| Error::io(&probe, e))?;
    fs::remove_file(&probe).map_err(|e| Error::io(&probe, e))
}

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

pub fn write_metrics_csv(rows: &[MetricsRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(METRICS_HEADER)?;
    for r in rows {
        w.write_record([
            r.skill.clone(),
            r.scenario.clone(),
            r.algo.clone(),
            fmt(r.success_rate),
            fmt(r.avg_return),
            fmt(r.avg_termination_episode),
            fmt(r.euclid_disp_cm),
            fmt(r.angular_disp_deg),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Per-episode whole-skill returns, one row per (repetition, algorithm,
/// episode). The starting model's return is only listed for runs that
/// needed no episode.
fn write_returns_csv(result: &ExperimentResult, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["episode", "return", "algo", "seed"])?;
    for rep in &result.repetitions {
        let RepetitionOutcome::Completed(c) = &rep.outcome else {
            continue;
        };
        for run in &c.runs {
            let skip = usize::from(run.per_episode_returns.len() > 1);
            for (e, r) in run.per_episode_returns.iter().enumerate().skip(skip) {
                w.write_record([
                    e.to_string(),
                    fmt(*r),
                    run.algo.name().to_string(),
                    rep.seed.to_string(),
                ])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Return curves with the running average over episodes 1..=e.
fn write_curves_csv(result: &ExperimentResult, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["algo", "seed", "episode", "return", "running_avg"])?;
    for rep in &result.repetitions {
        let RepetitionOutcome::Completed(c) = &rep.outcome else {
            continue;
        };
        for run in &c.runs {
            let mut sum = 0.0;
            for (k, r) in run.per_episode_returns.iter().skip(1).enumerate() {
                sum += r;
                w.write_record([
                    run.algo.name().to_string(),
                    rep.seed.to_string(),
                    (k + 1).to_string(),
                    fmt(*r),
                    fmt(sum / (k + 1) as f64),
                ])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes metrics.csv, returns.csv, curves.csv and report.json into
/// `out_dir`, returning their paths.
pub fn emit_outputs(cfg: &ExperimentConfig, result: &ExperimentResult, out_dir: &Path) -> Result<Vec<PathBuf>> {
    check_output_dir(out_dir)?;
    let metrics = out_dir.join("metrics.csv");
    let returns = out_dir.join("returns.csv");
    let curves = out_dir.join("curves.csv");
    let report = out_dir.join("report.json");
    write_metrics_csv(&result.rows, &metrics)?;
    write_returns_csv(result, &returns)?;
    write_curves_csv(result, &curves)?;
    let doc = ExperimentReport {
        schema_version: REPORT_SCHEMA_VERSION,
        config: cfg.clone(),
        result: result.clone(),
    };
    let text = serde_json::to_string(&doc)?;
    fs::write(&report, text).map_err(|e| Error::io(&report, e))?;
    Ok(vec![metrics, returns, curves, report])
}
