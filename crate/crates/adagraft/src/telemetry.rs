//! Step-norm telemetry from grafted runs and the offline schedule-correction
//! fits (linear and power-law) driven by it.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Group key used for whole-model norms.
pub const GLOBAL_GROUP: &str = "__global__";

#[derive(Debug, Error, PartialEq)]
pub enum TelemetryError {
    #[error("step {t} out of order for group {group:?}")]
    OutOfOrder { group: String, t: u64 },
    #[error("need at least 2 unguarded records for group {0:?}")]
    InsufficientData(String),
    #[error("nonpositive ratio at t={t} in group {group:?}; power fit needs ratio > 0")]
    NonPositiveRatio { group: String, t: u64 },
    #[error("no records for group {0:?}")]
    UnknownGroup(String),
    #[error("malformed csv at line {line}: {reason}")]
    MalformedCsv { line: usize, reason: String },
    #[error("io error: {0}")]
    Io(String),
}

/// One measured pair of step norms at step `t`.
///
/// `ratio` is `norm_m / norm_d` before any denominator guard. When
/// `norm_d == 0` the ratio is undefined; the record carries `guarded = true`
/// and `ratio = 0`, and fits skip it.
#[derive(Clone, Debug, PartialEq)]
pub struct StepNormRecord {
    pub t: u64,
    pub group: String,
    pub norm_m: f64,
    pub norm_d: f64,
    pub ratio: f64,
    pub guarded: bool,
}

impl StepNormRecord {
    pub fn measure(t: u64, group: impl Into<String>, norm_m: f64, norm_d: f64) -> StepNormRecord {
        let guarded = norm_d == 0.0;
        StepNormRecord {
            t,
            group: group.into(),
            norm_m,
            norm_d,
            ratio: if guarded { 0.0 } else { norm_m / norm_d },
            guarded,
        }
    }
}

/// All records of a run, grouped and ordered by (group, t).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepNormSeries {
    groups: BTreeMap<String, Vec<StepNormRecord>>,
}

impl StepNormSeries {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, rec: StepNormRecord) -> Result<(), TelemetryError> {
        let bucket = self.groups.entry(rec.group.clone()).or_default();
        if let Some(last) = bucket.last() {
            if rec.t <= last.t {
                return Err(TelemetryError::OutOfOrder {
                    group: rec.group,
                    t: rec.t,
                });
            }
        }
        bucket.push(rec);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.groups.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn group_names(&self) -> impl Iterator<Item = &str> {
        self.groups.keys().map(String::as_str)
    }

    pub fn group_records(&self, group: &str) -> Result<&[StepNormRecord], TelemetryError> {
        self.groups
            .get(group)
            .map(Vec::as_slice)
            .ok_or_else(|| TelemetryError::UnknownGroup(group.to_string()))
    }

    /// All records, ordered by (group, t).
    pub fn records(&self) -> impl Iterator<Item = &StepNormRecord> {
        self.groups.values().flatten()
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("t,group,norm_m,norm_d,ratio,guarded\n");
        for r in self.records() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.t,
                r.group,
                fmt_f64(r.norm_m),
                fmt_f64(r.norm_d),
                fmt_f64(r.ratio),
                r.guarded
            );
        }
        out
    }

    pub fn export_csv(&self, path: &Path) -> Result<(), TelemetryError> {
        std::fs::write(path, self.to_csv_string()).map_err(|e| TelemetryError::Io(e.to_string()))
    }

    pub fn from_csv_str(data: &str) -> Result<StepNormSeries, TelemetryError> {
        let mut lines = data.lines().enumerate();
        match lines.next() {
            Some((_, "t,group,norm_m,norm_d,ratio,guarded")) => {}
            _ => {
                return Err(TelemetryError::MalformedCsv {
                    line: 1,
                    reason: "missing header".into(),
                })
            }
        }
        let mut series = StepNormSeries::new();
        for (idx, line) in lines {
            if line.is_empty() {
                continue;
            }
            let bad = |reason: &str| TelemetryError::MalformedCsv {
                line: idx + 1,
                reason: reason.to_string(),
            };
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 6 {
                return Err(bad("expected 6 fields"));
            }
            let rec = StepNormRecord {
                t: fields[0].parse().map_err(|_| bad("bad step index"))?,
                group: fields[1].to_string(),
                norm_m: fields[2].parse().map_err(|_| bad("bad norm_m"))?,
                norm_d: fields[3].parse().map_err(|_| bad("bad norm_d"))?,
                ratio: fields[4].parse().map_err(|_| bad("bad ratio"))?,
                guarded: fields[5].parse().map_err(|_| bad("bad guarded flag"))?,
            };
            series.record(rec)?;
        }
        Ok(series)
    }

    pub fn import_csv(path: &Path) -> Result<StepNormSeries, TelemetryError> {
        let data = std::fs::read_to_string(path).map_err(|e| TelemetryError::Io(e.to_string()))?;
        Self::from_csv_str(&data)
    }
}

/// 17 significant digits: enough to round-trip any f64 through decimal.
pub(crate) fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Step range restriction for the correction fits.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitWindow {
    pub min_t: Option<u64>,
    pub max_t: Option<u64>,
}

impl FitWindow {
    pub const ALL: FitWindow = FitWindow {
        min_t: None,
        max_t: None,
    };

    /// Everything strictly after a warmup phase.
    pub fn after_warmup(warmup_steps: u64) -> FitWindow {
        FitWindow {
            min_t: Some(warmup_steps + 1),
            max_t: None,
        }
    }

    fn contains(&self, t: u64) -> bool {
        self.min_t.is_none_or(|m| t >= m) && self.max_t.is_none_or(|m| t <= m)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearFit {
    pub c0: f64,
    pub c1: f64,
    /// Root-mean-square error of the fit.
    pub residual: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerFit {
    pub scale: f64,
    pub alpha: f64,
    /// Root-mean-square error in log space.
    pub residual: f64,
}

fn fit_points(
    series: &StepNormSeries,
    group: &str,
    window: FitWindow,
) -> Result<Vec<(f64, f64)>, TelemetryError> {
    let recs = series.group_records(group)?;
    Ok(recs
        .iter()
        .filter(|r| !r.guarded && window.contains(r.t))
        .map(|r| (r.t as f64, r.ratio))
        .collect())
}

/// Ordinary least squares of `y` against `x` over the given points.
fn ols(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for &(x, y) in points {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
    }
    let slope = if sxx == 0.0 { 0.0 } else { sxy / sxx };
    let intercept = mean_y - slope * mean_x;
    let mse = points
        .iter()
        .map(|&(x, y)| {
            let e = y - (intercept + slope * x);
            e * e
        })
        .sum::<f64>()
        / n;
    (intercept, slope, mse.sqrt())
}

/// Least squares of ratio against t: the linear schedule correction.
pub fn fit_linear(series: &StepNormSeries, group: &str) -> Result<LinearFit, TelemetryError> {
    fit_linear_windowed(series, group, FitWindow::ALL)
}

pub fn fit_linear_windowed(
    series: &StepNormSeries,
    group: &str,
    window: FitWindow,
) -> Result<LinearFit, TelemetryError> {
    let pts = fit_points(series, group, window)?;
    if pts.len() < 2 {
        return Err(TelemetryError::InsufficientData(group.to_string()));
    }
    let (c0, c1, residual) = ols(&pts);
    Ok(LinearFit { c0, c1, residual })
}

/// Least squares of log(ratio) against log(t): the power-law correction.
pub fn fit_power(series: &StepNormSeries, group: &str) -> Result<PowerFit, TelemetryError> {
    fit_power_windowed(series, group, FitWindow::ALL)
}

pub fn fit_power_windowed(
    series: &StepNormSeries,
    group: &str,
    window: FitWindow,
) -> Result<PowerFit, TelemetryError> {
    let pts = fit_points(series, group, window)?;
    if pts.len() < 2 {
        return Err(TelemetryError::InsufficientData(group.to_string()));
    }
    let mut logs = Vec::with_capacity(pts.len());
    for &(t, r) in &pts {
        if r <= 0.0 {
            return Err(TelemetryError::NonPositiveRatio {
                group: group.to_string(),
                t: t as u64,
            });
        }
        logs.push((t.ln(), r.ln()));
    }
    let (intercept, slope, residual) = ols(&logs);
    Ok(PowerFit {
        scale: intercept.exp(),
        alpha: slope,
        residual,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitKind {
    Linear,
    Power,
}

/// Fitted correction in the shape emitted as JSON:
/// `{"group": ..., "kind": "linear"|"power", "params": [...], "residual": ...}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrectionFit {
    pub group: String,
    pub kind: FitKind,
    /// `[c0, c1]` for linear, `[scale, alpha]` for power.
    pub params: Vec<f64>,
    pub residual: f64,
}

impl CorrectionFit {
    pub fn fit(
        series: &StepNormSeries,
        group: &str,
        kind: FitKind,
        window: FitWindow,
    ) -> Result<CorrectionFit, TelemetryError> {
        match kind {
            FitKind::Linear => {
                let f = fit_linear_windowed(series, group, window)?;
                Ok(CorrectionFit {
                    group: group.to_string(),
                    kind,
                    params: vec![f.c0, f.c1],
                    residual: f.residual,
                })
            }
            FitKind::Power => {
                let f = fit_power_windowed(series, group, window)?;
                Ok(CorrectionFit {
                    group: group.to_string(),
                    kind,
                    params: vec![f.scale, f.alpha],
                    residual: f.residual,
                })
            }
        }
    }

    /// The fitted correction as a multiplicative schedule.
    pub fn to_schedule(&self) -> crate::schedules::Schedule {
        match self.kind {
            FitKind::Linear => crate::schedules::Schedule::Linear {
                c0: self.params[0],
                c1: self.params[1],
            },
            FitKind::Power => crate::schedules::Schedule::Power {
                c: self.params[0],
                alpha: self.params[1],
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series_from_ratio(
        f: impl Fn(u64) -> f64,
        range: std::ops::RangeInclusive<u64>,
    ) -> StepNormSeries {
        let mut s = StepNormSeries::new();
        for t in range {
            let ratio = f(t);
            s.record(StepNormRecord::measure(t, GLOBAL_GROUP, ratio, 1.0))
                .unwrap();
        }
        s
    }

    #[test]
    fn linear_fit_recovers_discovered_correction() {
        let s = series_from_ratio(|t| 0.2 + 1e-4 * t as f64, 1..=5000);
        let fit = fit_linear(&s, GLOBAL_GROUP).unwrap();
        assert!((fit.c0 - 0.2).abs() / 0.2 < 1e-3);
        assert!((fit.c1 - 1e-4).abs() / 1e-4 < 1e-3);
        assert!(fit.residual < 1e-12);
    }

    #[test]
    fn linear_fit_constant_series() {
        let s = series_from_ratio(|_| 3.0, 1..=100);
        let fit = fit_linear(&s, GLOBAL_GROUP).unwrap();
        assert!((fit.c0 - 3.0).abs() < 1e-9);
        assert!(fit.c1.abs() < 1e-9);
    }

    #[test]
    fn linear_fit_with_noise_matches_normal_equations_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let pts: Vec<(u64, f64)> = (1..=5000u64)
            .map(|t| (t, 0.2 + 1e-4 * t as f64 + rng.random_range(-0.01..0.01)))
            .collect();
        let mut s = StepNormSeries::new();
        for &(t, r) in &pts {
            s.record(StepNormRecord::measure(t, GLOBAL_GROUP, r, 1.0))
                .unwrap();
        }
        let fit = fit_linear(&s, GLOBAL_GROUP).unwrap();
        assert!((fit.c0 - 0.2).abs() / 0.2 < 0.05);
        assert!((fit.c1 - 1e-4).abs() / 1e-4 < 0.05);

        // normal equations solved directly with Cramer's rule
        let n = pts.len() as f64;
        let (mut st, mut stt, mut sr, mut str_) = (0.0, 0.0, 0.0, 0.0);
        for &(t, r) in &pts {
            let tf = t as f64;
            st += tf;
            stt += tf * tf;
            sr += r;
            str_ += tf * r;
        }
        let det = n * stt - st * st;
        let oracle_c0 = (sr * stt - st * str_) / det;
        let oracle_c1 = (n * str_ - st * sr) / det;
        assert!((fit.c0 - oracle_c0).abs() < 1e-9);
        assert!((fit.c1 - oracle_c1).abs() < 1e-9);
    }

    #[test]
    fn power_fit_recovers_exponent() {
        let s = series_from_ratio(|t| 5.0 * (t as f64).powf(-0.27), 1..=5000);
        let fit = fit_power(&s, GLOBAL_GROUP).unwrap();
        assert!((fit.alpha - -0.27).abs() < 1e-6);
        assert!((fit.scale - 5.0).abs() < 1e-6);
    }

    #[test]
    fn power_fit_constant_series() {
        let s = series_from_ratio(|_| 7.0, 1..=200);
        let fit = fit_power(&s, GLOBAL_GROUP).unwrap();
        assert!(fit.alpha.abs() < 1e-9);
        assert!((fit.scale - 7.0).abs() < 1e-9);
    }

    #[test]
    fn power_fit_inverse_sqrt() {
        let s = series_from_ratio(|t| 2.0 / (t as f64).sqrt(), 1..=1000);
        let fit = fit_power(&s, GLOBAL_GROUP).unwrap();
        assert!((fit.alpha - -0.5).abs() < 1e-9);
        assert!((fit.scale - 2.0).abs() < 1e-9);
    }

    #[test]
    fn power_fit_rejects_nonpositive_ratio() {
        let mut s = StepNormSeries::new();
        s.record(StepNormRecord::measure(1, "g", 1.0, 1.0)).unwrap();
        s.record(StepNormRecord::measure(2, "g", -0.5, 1.0))
            .unwrap();
        assert!(matches!(
            fit_power(&s, "g"),
            Err(TelemetryError::NonPositiveRatio { .. })
        ));
    }

    #[test]
    fn fits_need_two_unguarded_records() {
        let mut s = StepNormSeries::new();
        s.record(StepNormRecord::measure(1, "g", 1.0, 1.0)).unwrap();
        s.record(StepNormRecord::measure(2, "g", 1.0, 0.0)).unwrap();
        assert_eq!(
            fit_linear(&s, "g"),
            Err(TelemetryError::InsufficientData("g".into()))
        );
    }

    #[test]
    fn guarded_records_excluded_from_fit() {
        let mut s = StepNormSeries::new();
        for t in 1..=50u64 {
            // every third step has a zero direction norm
            let norm_d = if t % 3 == 0 { 0.0 } else { 1.0 };
            s.record(StepNormRecord::measure(t, "g", 2.0, norm_d))
                .unwrap();
        }
        let fit = fit_linear(&s, "g").unwrap();
        assert!((fit.c0 - 2.0).abs() < 1e-9);
        assert!(fit.c1.abs() < 1e-12);
    }

    #[test]
    fn out_of_order_rejected() {
        let mut s = StepNormSeries::new();
        s.record(StepNormRecord::measure(5, "g", 1.0, 1.0)).unwrap();
        assert!(matches!(
            s.record(StepNormRecord::measure(5, "g", 1.0, 1.0)),
            Err(TelemetryError::OutOfOrder { .. })
        ));
    }

    #[test]
    fn csv_empty_series_is_header_only() {
        let s = StepNormSeries::new();
        assert_eq!(s.to_csv_string(), "t,group,norm_m,norm_d,ratio,guarded\n");
    }

    #[test]
    fn csv_single_record_two_lines() {
        let mut s = StepNormSeries::new();
        s.record(StepNormRecord::measure(1, "g", 1.5, 3.0)).unwrap();
        assert_eq!(s.to_csv_string().lines().count(), 2);
    }

    #[test]
    fn window_filters_records() {
        let s = series_from_ratio(|t| if t <= 10 { 100.0 } else { 2.0 }, 1..=100);
        let fit = fit_linear_windowed(&s, GLOBAL_GROUP, FitWindow::after_warmup(10)).unwrap();
        assert!((fit.c0 - 2.0).abs() < 1e-9);
        assert!(fit.c1.abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn csv_round_trip_preserves_everything(
            norms in proptest::collection::vec((1e-12f64..1e12, 0.0f64..1e12), 1..40)
        ) {
            let mut s = StepNormSeries::new();
            for (i, &(m, d)) in norms.iter().enumerate() {
                s.record(StepNormRecord::measure(i as u64 + 1, "layer_0", m, d)).unwrap();
                s.record(StepNormRecord::measure(i as u64 + 1, GLOBAL_GROUP, m * 2.0, d * 2.0)).unwrap();
            }
            let round = StepNormSeries::from_csv_str(&s.to_csv_string()).unwrap();
            prop_assert_eq!(round, s);
        }

        #[test]
        fn power_fit_round_trips_generated_data(
            scale in 1e-3f64..1e3,
            alpha in -1.0f64..1.0,
        ) {
            let s = series_from_ratio(|t| scale * (t as f64).powf(alpha), 1..=500);
            let fit = fit_power(&s, GLOBAL_GROUP).unwrap();
            prop_assert!((fit.alpha - alpha).abs() < 1e-6 * alpha.abs().max(1.0));
            prop_assert!((fit.scale - scale).abs() / scale < 1e-6);
        }
    }
}
