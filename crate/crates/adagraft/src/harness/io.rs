//! Training-curve CSV: `step,train_loss,test_metric,lr_effective`.
//!
//! Floats are written with 17 significant digits so a round trip through the
//! file recovers the exact bits.

use std::fmt::Write as _;
use std::path::Path;

use crate::telemetry::TelemetryError;

use super::{CurvePoint, TrainingCurve};

pub(crate) fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn curve_to_csv_string(curve: &TrainingCurve) -> String {
    let mut out = String::from("step,train_loss,test_metric,lr_effective\n");
    for p in &curve.points {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            p.step,
            fmt_f64(p.train_loss),
            fmt_f64(p.test_metric),
            fmt_f64(p.lr_effective)
        );
    }
    out
}

pub fn write_curve_csv(curve: &TrainingCurve, path: &Path) -> Result<(), TelemetryError> {
    std::fs::write(path, curve_to_csv_string(curve)).map_err(|e| TelemetryError::Io(e.to_string()))
}

/// Parse a curve CSV. The divergence flag travels in the run manifest, not
/// the CSV, so it is not recovered here.
pub fn curve_from_csv_str(data: &str) -> Result<TrainingCurve, TelemetryError> {
    let mut lines = data.lines().enumerate();
    match lines.next() {
        Some((_, "step,train_loss,test_metric,lr_effective")) => {}
        _ => {
            return Err(TelemetryError::MalformedCsv {
                line: 1,
                reason: "missing header".into(),
            })
        }
    }
    let mut curve = TrainingCurve::default();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let bad = |reason: &str| TelemetryError::MalformedCsv {
            line: idx + 1,
            reason: reason.to_string(),
        };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(bad("expected 4 fields"));
        }
        curve.points.push(CurvePoint {
            step: fields[0].parse().map_err(|_| bad("bad step"))?,
            train_loss: fields[1].parse().map_err(|_| bad("bad train_loss"))?,
            test_metric: fields[2].parse().map_err(|_| bad("bad test_metric"))?,
            lr_effective: fields[3].parse().map_err(|_| bad("bad lr_effective"))?,
        });
    }
    Ok(curve)
}

pub fn read_curve_csv(path: &Path) -> Result<TrainingCurve, TelemetryError> {
    let data = std::fs::read_to_string(path).map_err(|e| TelemetryError::Io(e.to_string()))?;
    curve_from_csv_str(&data)
}
