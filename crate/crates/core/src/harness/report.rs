//! Metrics tables, verdicts and artifact files.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ExperimentName, SCHEMA_VERSION};
use crate::error::Result;

/// One checked instance of an inequality `lhs ≤ rhs + tol`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub check: String,
    pub case: usize,
    /// Time, particle number or scale, depending on the check.
    pub param: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub tol: f64,
}

impl MetricRow {
    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs + self.tol
    }

    pub fn margin(&self) -> f64 {
        self.rhs + self.tol - self.lhs
    }
}

/// Pass/fail status of one inequality over all its rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub check: String,
    /// Name of the result the inequality comes from.
    pub anchor: String,
    pub statement: String,
    pub passed: bool,
    pub rows: usize,
    pub violations: usize,
    pub worst_margin: f64,
}

impl Verdict {
    /// Recomputes the verdict from a metrics table.
    pub fn from_rows(check: &str, anchor: &str, statement: &str, rows: &[MetricRow]) -> Self {
        let mine: Vec<&MetricRow> = rows.iter().filter(|r| r.check == check).collect();
        let violations = mine.iter().filter(|r| !r.holds()).count();
        Verdict {
            check: check.into(),
            anchor: anchor.into(),
            statement: statement.into(),
            passed: !mine.is_empty() && violations == 0,
            rows: mine.len(),
            violations,
            worst_margin: mine.iter().map(|r| r.margin()).fold(f64::INFINITY, f64::min),
        }
    }
}

/// A curve for plotting: `(x, y, yerr)` points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub x_label: String,
    pub y_label: String,
    pub log_scale: bool,
    pub points: Vec<(f64, f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation: Option<String>,
    /// A second curve sampled at the same `x`, written as a fourth column.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<(String, Vec<f64>)>,
}

impl Series {
    pub fn new(name: &str, x_label: &str, y_label: &str, points: Vec<(f64, f64, f64)>) -> Self {
        Self {
            name: name.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            log_scale: false,
            points,
            annotation: None,
            reference: None,
        }
    }

    pub fn with_reference(mut self, label: &str, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), self.points.len());
        self.reference = Some((label.into(), values));
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub crate_version: String,
    pub schema_version: u32,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: ExperimentName,
    pub label: String,
    pub metrics: Vec<MetricRow>,
    pub verdicts: Vec<Verdict>,
    pub provenance: Provenance,
    /// Experiment-specific numbers that are not inequalities.
    pub summary: BTreeMap<String, serde_json::Value>,
    #[serde(skip)]
    pub series: Vec<Series>,
    /// Files written, relative to the job directory.
    pub artifacts: Vec<String>,
    pub warnings: Vec<String>,
    /// Cause of an aborted run; metrics hold what was computed before it.
    pub failure: Option<String>,
}

impl ExperimentReport {
    pub fn passed(&self) -> bool {
        self.failure.is_none() && self.verdicts.iter().all(|v| v.passed)
    }

    pub fn verdict(&self, check: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.check == check)
    }

    pub fn rows(&self, check: &str) -> impl Iterator<Item = &MetricRow> {
        let check = check.to_string();
        self.metrics.iter().filter(move |r| r.check == check)
    }

    /// CSV with header `check,case,param,lhs,rhs,tol,holds`.
    pub fn write_metrics_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "check,case,param,lhs,rhs,tol,holds")?;
        for r in &self.metrics {
            writeln!(
                out,
                "{},{},{:.17e},{:.17e},{:.17e},{:.17e},{}",
                r.check,
                r.case,
                r.param,
                r.lhs,
                r.rhs,
                r.tol,
                r.holds()
            )?;
        }
        Ok(())
    }
}

/// Collects rows and verdict definitions while an experiment runs.
pub(crate) struct Recorder {
    pub rows: Vec<MetricRow>,
    checks: Vec<(String, String, String)>,
    pub summary: BTreeMap<String, serde_json::Value>,
    pub series: Vec<Series>,
    pub files: Vec<(String, Vec<u8>)>,
    pub warnings: Vec<String>,
}

impl Recorder {
    pub fn new() -> Self {
        Self {
            rows: Vec::new(),
            checks: Vec::new(),
            summary: BTreeMap::new(),
            series: Vec::new(),
            files: Vec::new(),
            warnings: Vec::new(),
        }
    }

    /// Declares an inequality; rows are attached with [`Recorder::row`].
    pub fn check(&mut self, check: &str, anchor: &str, statement: &str) {
        self.checks.push((check.into(), anchor.into(), statement.into()));
    }

    pub fn row(&mut self, check: &str, case: usize, param: f64, lhs: f64, rhs: f64, tol: f64) {
        debug_assert!(self.checks.iter().any(|c| c.0 == check), "undeclared check {check}");
        self.rows.push(MetricRow {
            check: check.into(),
            case,
            param,
            lhs,
            rhs,
            tol,
        });
    }

    pub fn note(&mut self, key: &str, value: impl Serialize) {
        self.summary
            .insert(key.into(), serde_json::to_value(value).unwrap_or(serde_json::Value::Null));
    }

    pub fn file(&mut self, name: &str, write: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        write(&mut buf)?;
        self.files.push((name.into(), buf));
        Ok(())
    }

    pub fn finish(self, config: &ExperimentConfig, seed: u64, failure: Option<String>) -> (ExperimentReport, Vec<(String, Vec<u8>)>) {
        let verdicts = self
            .checks
            .iter()
            .map(|(c, a, s)| Verdict::from_rows(c, a, s, &self.rows))
            .collect();
        let report = ExperimentReport {
            experiment: config.experiment,
            label: config.job_name(),
            metrics: self.rows,
            verdicts,
            provenance: Provenance {
                config_hash: config.hash(),
                crate_version: env!("CARGO_PKG_VERSION").into(),
                schema_version: SCHEMA_VERSION,
                seed,
            },
            summary: self.summary,
            series: self.series,
            artifacts: Vec::new(),
            warnings: self.warnings,
            failure,
        };
        (report, self.files)
    }
}

/// Writes `bytes` to a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("artifact");
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Tags an artifact with the config hash: a leading comment line for CSV and
/// data files, a `config_hash` field for JSON objects.
pub(crate) fn stamp(name: &str, hash: &str, bytes: &[u8]) -> Vec<u8> {
    if name.ends_with(".csv") || name.ends_with(".dat") {
        let mut out = format!("# config_sha256={hash}\n").into_bytes();
        out.extend_from_slice(bytes);
        return out;
    }
    if name.ends_with(".json") {
        if let Ok(serde_json::Value::Object(mut map)) = serde_json::from_slice(bytes) {
            map.insert("config_hash".into(), hash.into());
            if let Ok(out) = serde_json::to_vec_pretty(&map) {
                return out;
            }
        }
    }
    bytes.to_vec()
}

/// Writes plot data for every series of the report into `dir`: one
/// whitespace-separated `x y yerr` file per series and a `plots.json`
/// description. Returns the file names written.
pub fn emit_plots(report: &mut ExperimentReport, dir: &Path) -> Result<Vec<String>> {
    if report.series.is_empty() {
        report.warnings.push("no plot series; no plot files written".into());
        return Ok(Vec::new());
    }
    let hash = report.provenance.config_hash.clone();
    let mut names = Vec::new();
    let mut described = Vec::new();
    for s in &report.series {
        let name = format!("plot_{}.dat", s.name);
        let mut text = format!("# {} vs {}\n", s.y_label, s.x_label);
        if let Some(a) = &s.annotation {
            text.push_str(&format!("# {a}\n"));
        }
        match &s.reference {
            Some((label, _)) => text.push_str(&format!("# x y yerr {}\n", label.replace(' ', "_"))),
            None => text.push_str("# x y yerr\n"),
        }
        for (i, (x, y, e)) in s.points.iter().enumerate() {
            text.push_str(&format!("{x:.17e} {y:.17e} {e:.17e}"));
            if let Some(r) = s.reference.as_ref().and_then(|(_, v)| v.get(i)) {
                text.push_str(&format!(" {r:.17e}"));
            }
            text.push('\n');
        }
        write_atomic(&dir.join(&name), &stamp(&name, &hash, text.as_bytes()))?;
        described.push(serde_json::json!({
            "file": name,
            "title": s.name,
            "x": s.x_label,
            "y": s.y_label,
            "log_scale": s.log_scale,
            "annotation": s.annotation,
            "reference": s.reference.as_ref().map(|r| &r.0),
        }));
        names.push(name);
    }
    let desc = serde_json::json!({ "config_hash": hash, "plots": described });
    write_atomic(&dir.join("plots.json"), &serde_json::to_vec_pretty(&desc)?)?;
    names.push("plots.json".into());
    Ok(names)
}

/// Writes the metrics table, the report and the experiment's files into
/// `dir`, then the plot data.
pub(crate) fn write_report(report: &mut ExperimentReport, files: &[(String, Vec<u8>)], dir: &Path) -> Result<()> {
    let hash = report.provenance.config_hash.clone();
    let mut written = Vec::new();
    for (name, bytes) in files {
        write_atomic(&dir.join(name), &stamp(name, &hash, bytes))?;
        written.push(name.clone());
    }
    let mut csv = Vec::new();
    report.write_metrics_csv(&mut csv)?;
    write_atomic(&dir.join("metrics.csv"), &stamp("metrics.csv", &hash, &csv))?;
    written.push("metrics.csv".into());
    let plots = emit_plots(report, &dir.join("plots"))?;
    written.extend(plots.into_iter().map(|p| format!("plots/{p}")));
    written.push("report.json".into());
    report.artifacts = written;
    write_atomic(&dir.join("report.json"), &serde_json::to_vec_pretty(report)?)?;
    Ok(())
}

/// Reads a metrics table written by [`ExperimentReport::write_metrics_csv`],
/// skipping comment lines.
pub fn read_metrics_csv(text: &str) -> Result<Vec<MetricRow>> {
    let bad = |line: &str| crate::error::Error::Artifact(format!("malformed metrics line '{line}'"));
    let mut rows = Vec::new();
    for line in text.lines().filter(|l| !l.starts_with('#')).skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(bad(line));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(line));
        rows.push(MetricRow {
            check: f[0].into(),
            case: f[1].parse().map_err(|_| bad(line))?,
            param: num(f[2])?,
            lhs: num(f[3])?,
            rhs: num(f[4])?,
            tol: num(f[5])?,
        });
    }
    Ok(rows)
}

pub(crate) fn job_dir(config: &ExperimentConfig) -> Option<PathBuf> {
    config.output_dir.clone()
}
