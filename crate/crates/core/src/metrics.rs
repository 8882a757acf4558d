//! Angle error, tip error, threshold error rate, and batch reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phantom::GroundTruth;
use crate::pipeline::Detection;

/// Default TER thresholds: degrees and millimetres.
pub const DEFAULT_ANGLE_THRESH: f64 = 15.0;
pub const DEFAULT_TIP_THRESH: f64 = 10.0;

pub const CSV_HEADER: &str = "sequence_id,angle_err_deg,tip_err_mm,exceeds_ter";

/// Errors of one prediction; `None` marks a failed detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub sequence_id: String,
    pub angle_error: Option<f64>,
    pub tip_error: Option<f64>,
}

impl ErrorRecord {
    pub fn is_missing(&self) -> bool {
        self.angle_error.is_none() || self.tip_error.is_none()
    }

    pub fn exceeds(&self, thresholds: &Thresholds) -> bool {
        match (self.angle_error, self.tip_error) {
            (Some(a), Some(t)) => a > thresholds.angle_deg || t > thresholds.tip_mm,
            _ => true,
        }
    }

    /// Compares a detection against ground truth.
    pub fn from_detection(id: &str, det: &Detection, gt: &GroundTruth) -> Result<Self> {
        let located = !det.is_empty();
        let tip_error = match det.tip() {
            Some(tip) => Some(tip_error(tip, (gt.tip_x, gt.tip_y), gt.pixel_spacing)?),
            None => None,
        };
        Ok(Self {
            sequence_id: id.to_string(),
            angle_error: located.then(|| angle_error(det.theta, gt.theta)),
            tip_error,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub angle_deg: f64,
    pub tip_mm: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            angle_deg: DEFAULT_ANGLE_THRESH,
            tip_mm: DEFAULT_TIP_THRESH,
        }
    }
}

/// Distance between two undirected line angles, in `[0, 90]`.
pub fn angle_error(pred_deg: f64, gt_deg: f64) -> f64 {
    let d = (pred_deg - gt_deg).abs().rem_euclid(180.0);
    d.min(180.0 - d)
}

/// Euclidean tip distance scaled to millimetres.
pub fn tip_error(pred: (f64, f64), gt: (f64, f64), spacing_mm: f64) -> Result<f64> {
    if !(spacing_mm > 0.0) {
        return Err(Error::validation(format!("pixel spacing must be positive, got {spacing_mm}")));
    }
    Ok(spacing_mm * (pred.0 - gt.0).hypot(pred.1 - gt.1))
}

/// Percentage of records over either threshold or missing.
pub fn ter(records: &[ErrorRecord], thresholds: &Thresholds) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::validation("TER of an empty record set"));
    }
    let bad = records.iter().filter(|r| r.exceeds(thresholds)).count();
    Ok(100.0 * bad as f64 / records.len() as f64)
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Summary row of a report. Missing records are excluded from the means
/// and counted in `n_missing` and in the TER.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub angle_mean: f64,
    pub angle_std: f64,
    pub tip_mean: f64,
    pub tip_std: f64,
    pub ter_percent: f64,
    pub n: usize,
    pub n_missing: usize,
}

pub fn aggregate(records: &[ErrorRecord], thresholds: &Thresholds) -> Result<Aggregate> {
    let ter_percent = ter(records, thresholds)?;
    let complete: Vec<_> = records.iter().filter(|r| !r.is_missing()).collect();
    let angles: Vec<f64> = complete.iter().filter_map(|r| r.angle_error).collect();
    let tips: Vec<f64> = complete.iter().filter_map(|r| r.tip_error).collect();
    let (angle_mean, angle_std) = mean_std(&angles);
    let (tip_mean, tip_std) = mean_std(&tips);
    Ok(Aggregate {
        angle_mean,
        angle_std,
        tip_mean,
        tip_std,
        ter_percent,
        n: records.len(),
        n_missing: records.len() - complete.len(),
    })
}

/// Per-record CSV followed by one aggregate row (`id = "aggregate"`,
/// errors as `mean±std`, last column the TER percentage).
pub fn report_csv(records: &[ErrorRecord], agg: &Aggregate, thresholds: &Thresholds) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# std: population");
    let _ = writeln!(out, "{CSV_HEADER}");
    let opt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_else(|| "missing".into());
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.sequence_id,
            opt(r.angle_error),
            opt(r.tip_error),
            r.exceeds(thresholds)
        );
    }
    let _ = writeln!(
        out,
        "aggregate,{:.6}±{:.6},{:.6}±{:.6},{:.2}",
        agg.angle_mean, agg.angle_std, agg.tip_mean, agg.tip_std, agg.ter_percent
    );
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchReport {
    pub records: Vec<ErrorRecord>,
    pub aggregate: Aggregate,
    pub csv: String,
    /// Ids present on only one side; excluded.
    pub unmatched: Vec<String>,
}

fn json_files(dir: &Path, suffix: &str, skip: Option<&str>) -> Result<BTreeMap<String, std::path::PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if skip.is_some_and(|s| name.ends_with(s)) {
            continue;
        }
        if let Some(id) = name.strip_suffix(suffix) {
            out.insert(id.to_string(), path.clone());
        }
    }
    Ok(out)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Pairs `<id>.json` detections in `pred_dir` with `<id>.gt.json` files in
/// `gt_dir` and scores them.
pub fn evaluate_batch(pred_dir: &Path, gt_dir: &Path, thresholds: &Thresholds) -> Result<BatchReport> {
    let preds = json_files(pred_dir, ".json", Some(".gt.json"))?;
    let gts = json_files(gt_dir, ".gt.json", None)?;
    let unmatched: Vec<String> = preds
        .keys()
        .filter(|id| !gts.contains_key(*id))
        .chain(gts.keys().filter(|id| !preds.contains_key(*id)))
        .cloned()
        .collect();
    let pairs: Vec<_> = preds
        .iter()
        .filter_map(|(id, p)| gts.get(id).map(|g| (id, p, g)))
        .collect();
    let records = pairs
        .par_iter()
        .map(|(id, p, g)| {
            let det: Detection = read_json(p)?;
            let gt: GroundTruth = read_json(g)?;
            ErrorRecord::from_detection(id, &det, &gt)
        })
        .collect::<Result<Vec<_>>>()?;
    if records.is_empty() {
        return Err(Error::validation(format!(
            "no matching prediction/ground-truth pairs in {} and {}",
            pred_dir.display(),
            gt_dir.display()
        )));
    }
    let aggregate = aggregate(&records, thresholds)?;
    let csv = report_csv(&records, &aggregate, thresholds);
    Ok(BatchReport {
        records,
        aggregate,
        csv,
        unmatched,
    })
}
