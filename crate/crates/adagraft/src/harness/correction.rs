//! Schedule-correction discovery: run global grafting with telemetry, fit the
//! norm-ratio series, then re-run the direction optimizer alone with its
//! schedule multiplied by the fitted correction.

use crate::graft::GraftScope;
use crate::telemetry::{CorrectionFit, FitKind, FitWindow, GLOBAL_GROUP};

use super::{
    train, HarnessError, OptimizerSpec, ProblemSpec, RunOptimizerSpec, RunResult, RunSettings,
    TrainOptions,
};

#[derive(Debug)]
pub struct CorrectionOutcome {
    pub grafted: RunResult,
    pub direction_plain: RunResult,
    pub fit: Option<CorrectionFit>,
    pub direction_corrected: Option<RunResult>,
    /// Set when the fit failed; the runs above still form a partial report.
    pub fit_error: Option<String>,
}

/// Fit window: explicit wins; otherwise everything after the longest declared
/// warmup among the two schedules; otherwise the whole series.
fn default_window(m: &OptimizerSpec, d: &OptimizerSpec) -> FitWindow {
    let warmup =
        m.lr.warmup_length()
            .into_iter()
            .chain(d.lr.warmup_length())
            .max();
    match warmup {
        Some(w) if w > 0 => FitWindow::after_warmup(w),
        _ => FitWindow::ALL,
    }
}

pub fn correction_pipeline(
    problem: &ProblemSpec,
    m: &OptimizerSpec,
    d: &OptimizerSpec,
    fit_kind: FitKind,
    window: Option<FitWindow>,
    settings: &RunSettings,
    options: TrainOptions,
) -> Result<CorrectionOutcome, HarnessError> {
    let graft_spec = RunOptimizerSpec::Grafted {
        m: m.clone(),
        d: d.clone(),
        scope: GraftScope::Global,
        eps_graft: 0.0,
    };
    let grafted = train(
        problem,
        &graft_spec,
        settings,
        TrainOptions {
            with_telemetry: true,
            capture_trajectory: options.capture_trajectory,
        },
    )?;

    let direction_plain = train(
        problem,
        &RunOptimizerSpec::Plain(d.clone()),
        settings,
        options,
    )?;

    let series = grafted
        .telemetry
        .as_ref()
        .ok_or_else(|| HarnessError::InvalidConfig("grafted run produced no telemetry".into()))?;
    let window = window.unwrap_or_else(|| default_window(m, d));
    let fit = match CorrectionFit::fit(series, GLOBAL_GROUP, fit_kind, window) {
        Ok(fit) => fit,
        Err(e) => {
            return Ok(CorrectionOutcome {
                grafted,
                direction_plain,
                fit: None,
                direction_corrected: None,
                fit_error: Some(e.to_string()),
            })
        }
    };

    let corrected_spec = d.clone().with_lr(d.lr.clone().times(fit.to_schedule()));
    let direction_corrected = match corrected_spec.build_config() {
        Ok(_) => Some(train(
            problem,
            &RunOptimizerSpec::Plain(corrected_spec),
            settings,
            options,
        )?),
        Err(e) => {
            // fitted correction produced an unusable schedule
            return Ok(CorrectionOutcome {
                grafted,
                direction_plain,
                fit: Some(fit),
                direction_corrected: None,
                fit_error: Some(e.to_string()),
            });
        }
    };

    Ok(CorrectionOutcome {
        grafted,
        direction_plain,
        fit: Some(fit),
        direction_corrected,
        fit_error: None,
    })
}
