//! Report files.
//!
//! `export_report` writes, into one directory:
//!
//! - `summary.json`: the full [`ExperimentReport`] (re-loadable);
//! - `repeat{r}_injected.csv` and, with embedded dropout, `repeat{r}_embedded.csv`:
//!   per-rate validation metrics;
//! - `repeat{r}_curve_{unscaled,scaled,relaxed}.csv`: test calibration curves
//!   at the scale-aware rate;
//! - `repeat{r}_metrics.json`: `{rmse, nll, ma, balance}` for each of those curves;
//! - `manifest.json`: every file above.
//!
//! Each file is written to a temporary sibling and renamed into place.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::experiment::{ExperimentReport, RepeatReport};
use crate::metrics::{self, CalibrationCurve, MetricsSummary};
use crate::tuner::write_rows_csv;
use crate::{Error, Result};

pub const SUMMARY_FILE: &str = "summary.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repeat: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub files: Vec<ManifestEntry>,
}

/// Writes `bytes` to `dir/name` via a temporary file and a rename.
pub fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf> {
    let target = dir.join(name);
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(&target).map_err(|e| Error::io(&target, e.error))?;
    Ok(target)
}

fn curve_summary(curve: &CalibrationCurve, rmse: f64, nll: f64) -> MetricsSummary {
    MetricsSummary {
        rmse,
        nll,
        ma: metrics::miscalibration_area(curve),
        balance: metrics::balance(curve),
    }
}

#[derive(Serialize)]
struct RepeatMetrics {
    rate: f64,
    unscaled: MetricsSummary,
    scaled: MetricsSummary,
    relaxed: Option<MetricsSummary>,
}

fn repeat_metrics(r: &RepeatReport) -> Result<RepeatMetrics> {
    let t = &r.injected_test;
    Ok(RepeatMetrics {
        rate: r.curves.rate,
        unscaled: curve_summary(&r.curves.unscaled, t.rmse_scaled, r.curves.nll_unscaled),
        scaled: curve_summary(&r.curves.scaled, t.rmse_scaled, t.nll_scaled),
        relaxed: match (&r.curves.relaxed, t.nll_relaxed) {
            (Some(c), Some(nll)) => Some(curve_summary(c, t.rmse_scaled, nll)),
            _ => None,
        },
    })
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

pub fn export_report(report: &ExperimentReport, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    if report.repeats.is_empty() {
        return Err(Error::InvalidConfig("report has no repeats; nothing to export".into()));
    }
    let dir = out_dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut files = Vec::new();
    let mut emit = |name: String, kind: &str, repeat: Option<usize>, bytes: Vec<u8>| -> Result<()> {
        write_atomic(dir, &name, &bytes)?;
        files.push(ManifestEntry {
            path: name,
            kind: kind.to_owned(),
            repeat,
        });
        Ok(())
    };

    emit(SUMMARY_FILE.into(), "summary", None, report.to_json().into_bytes())?;
    for r in &report.repeats {
        let i = r.repeat;
        emit(
            format!("repeat{i}_injected.csv"),
            "sweep_injected",
            Some(i),
            csv_bytes(|b| write_rows_csv(&r.sweep.injected.rows, b))?,
        )?;
        if let Some(embedded) = &r.sweep.embedded {
            emit(
                format!("repeat{i}_embedded.csv"),
                "sweep_embedded",
                Some(i),
                csv_bytes(|b| write_rows_csv(&embedded.rows, b))?,
            )?;
        }
        let curves = [
            ("unscaled", Some(&r.curves.unscaled)),
            ("scaled", Some(&r.curves.scaled)),
            ("relaxed", r.curves.relaxed.as_ref()),
        ];
        for (label, curve) in curves {
            if let Some(curve) = curve {
                emit(
                    format!("repeat{i}_curve_{label}.csv"),
                    &format!("curve_{label}"),
                    Some(i),
                    csv_bytes(|b| curve.write_csv(b))?,
                )?;
            }
        }
        let metrics = serde_json::to_vec_pretty(&repeat_metrics(r)?).expect("metrics serialize");
        emit(format!("repeat{i}_metrics.json"), "metrics", Some(i), metrics)?;
    }

    let manifest = Manifest { files };
    let bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    write_atomic(dir, MANIFEST_FILE, &bytes)?;
    Ok(manifest)
}

/// Loads `summary.json` written by [`export_report`].
pub fn load_report(path: impl AsRef<Path>) -> Result<ExperimentReport> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ExperimentReport::from_json(&text)
}
