//! Grafting meta-optimizer: combine the step magnitude of one optimizer with
//! the step direction of another.
//!
//! Each step computes a single gradient, passes it to both children, and
//! rescales the direction optimizer's proposal so its norm matches the
//! magnitude optimizer's, either per parameter group or over the whole model:
//!
//! ```text
//! grafted = (|step_M| / (|step_D| + eps)) * step_D
//! ```
//!
//! A zero direction step yields a zero grafted step regardless of the
//! magnitude side, so `eps = 0` never divides by zero here.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::core::{CoreError, Gradient, ModelParams, StepProposal};
use crate::optim::{InPlaceOptimizer, OptimError, StepOptimizer};
use crate::telemetry::{StepNormRecord, StepNormSeries, TelemetryError, GLOBAL_GROUP};

#[derive(Debug, Error)]
pub enum GraftError {
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Telemetry(#[from] TelemetryError),
    #[error("non-finite norm ratio in scope unit {0:?}")]
    NonFiniteRatio(String),
}

/// Whether norms and ratios are taken per parameter group or over the
/// concatenation of all groups.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraftScope {
    LayerWise,
    Global,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraftConfig {
    pub scope: GraftScope,
    /// Additive guard on the direction norm. The zero-direction rule makes 0
    /// safe; a tiny positive value only matters for near-zero direction steps.
    pub eps_graft: f64,
}

impl GraftConfig {
    pub fn new(scope: GraftScope, eps_graft: f64) -> GraftConfig {
        GraftConfig { scope, eps_graft }
    }

    pub fn layer_wise() -> GraftConfig {
        GraftConfig::new(GraftScope::LayerWise, 0.0)
    }

    pub fn global() -> GraftConfig {
        GraftConfig::new(GraftScope::Global, 0.0)
    }
}

/// Two independent child optimizers driven in lockstep.
///
/// Both children observe every gradient exactly once per step. Their
/// hyperparameters are fully independent; in particular the direction child's
/// learning-rate scale cancels out of the grafted update.
#[derive(Clone, Debug)]
pub struct GraftedOptimizer<M, D> {
    magnitude: M,
    direction: D,
    cfg: GraftConfig,
    label: String,
    telemetry: Option<StepNormSeries>,
    t: u64,
    last_ratio: f64,
}

impl<M: StepOptimizer, D: StepOptimizer> GraftedOptimizer<M, D> {
    pub fn new(magnitude: M, direction: D, cfg: GraftConfig) -> Self {
        let label = format!("{}#{}", magnitude.label(), direction.label());
        GraftedOptimizer {
            magnitude,
            direction,
            cfg,
            label,
            telemetry: None,
            t: 0,
            last_ratio: 0.0,
        }
    }

    /// Start collecting per-step norm records.
    pub fn with_telemetry(mut self) -> Self {
        self.telemetry = Some(StepNormSeries::new());
        self
    }

    pub fn take_telemetry(&mut self) -> Option<StepNormSeries> {
        self.telemetry.take()
    }

    pub fn magnitude(&self) -> &M {
        &self.magnitude
    }

    pub fn direction(&self) -> &D {
        &self.direction
    }

    pub fn config(&self) -> &GraftConfig {
        &self.cfg
    }

    /// Query both children on the same gradient and build the grafted step.
    pub fn graft_step(
        &mut self,
        w: &ModelParams,
        g: &Gradient,
    ) -> Result<StepProposal, GraftError> {
        let step_m = self.magnitude.propose(w, g)?;
        let step_d = self.direction.propose(w, g)?;
        self.t += 1;
        let t = self.t;

        let global_m = step_m.global_norm();
        let global_d = step_d.global_norm();
        let global_ratio = combine_ratio(global_m, global_d, self.cfg.eps_graft, GLOBAL_GROUP)?;

        let grafted = match self.cfg.scope {
            GraftScope::Global => {
                if let Some(series) = &mut self.telemetry {
                    series.record(StepNormRecord::measure(t, GLOBAL_GROUP, global_m, global_d))?;
                }
                self.last_ratio = global_ratio;
                step_d.scaled(global_ratio)?
            }
            GraftScope::LayerWise => {
                let mut factors = Vec::with_capacity(step_d.groups().len());
                for (gm, gd) in step_m.groups().iter().zip(step_d.groups()) {
                    let nm = gm.params().norm();
                    let nd = gd.params().norm();
                    if let Some(series) = &mut self.telemetry {
                        series.record(StepNormRecord::measure(t, gm.name(), nm, nd))?;
                    }
                    factors.push(combine_ratio(nm, nd, self.cfg.eps_graft, gm.name())?);
                }
                // record the whole-model ratio too, so layer-wise runs can be
                // compared against a global correction
                if let Some(series) = &mut self.telemetry {
                    series.record(StepNormRecord::measure(t, GLOBAL_GROUP, global_m, global_d))?;
                }
                self.last_ratio = global_ratio;
                step_d.scaled_per_group(&factors)?
            }
        };
        Ok(grafted)
    }
}

fn combine_ratio(norm_m: f64, norm_d: f64, eps: f64, unit: &str) -> Result<f64, GraftError> {
    if norm_d == 0.0 {
        // zero direction step stays zero regardless of the magnitude side
        return Ok(0.0);
    }
    let ratio = norm_m / (norm_d + eps);
    if !ratio.is_finite() {
        return Err(GraftError::NonFiniteRatio(unit.to_string()));
    }
    Ok(ratio)
}

impl<M: StepOptimizer, D: StepOptimizer> StepOptimizer for GraftedOptimizer<M, D> {
    fn propose(&mut self, w: &ModelParams, g: &Gradient) -> Result<StepProposal, OptimError> {
        self.graft_step(w, g).map_err(|e| match e {
            GraftError::Optim(e) => e,
            GraftError::Core(e) => OptimError::Core(e),
            e @ GraftError::NonFiniteRatio(_) => OptimError::Numeric(e.to_string()),
            other => OptimError::InvalidConfig(other.to_string()),
        })
    }

    fn step_count(&self) -> u64 {
        self.t
    }

    fn label(&self) -> &str {
        &self.label
    }

    fn last_effective_scale(&self) -> f64 {
        self.last_ratio
    }
}

/// Grafting against optimizers that only expose in-place updates.
///
/// Saves the weights to scratch, runs the magnitude child in place, measures
/// its displacement, reloads, runs the direction child in place, and rescales
/// that displacement. Returns the next iterate. Matches
/// [`GraftedOptimizer::graft_step`] when both children are this library's own
/// optimizers.
pub fn blackbox_graft_step<M: InPlaceOptimizer, D: InPlaceOptimizer>(
    magnitude: &mut M,
    direction: &mut D,
    cfg: &GraftConfig,
    w: &ModelParams,
    g: &Gradient,
) -> Result<ModelParams, GraftError> {
    let scratch = w.clone();

    let mut after_m = scratch.clone();
    magnitude.update_in_place(&mut after_m, g)?;
    let step_m = after_m.delta_from(&scratch)?;

    let mut after_d = scratch.clone();
    direction.update_in_place(&mut after_d, g)?;
    let step_d = after_d.delta_from(&scratch)?;

    let grafted = match cfg.scope {
        GraftScope::Global => {
            let ratio = combine_ratio(
                step_m.global_norm(),
                step_d.global_norm(),
                cfg.eps_graft,
                GLOBAL_GROUP,
            )?;
            step_d.scaled(ratio)?
        }
        GraftScope::LayerWise => {
            let factors = step_m
                .groups()
                .iter()
                .zip(step_d.groups())
                .map(|(gm, gd)| {
                    combine_ratio(
                        gm.params().norm(),
                        gd.params().norm(),
                        cfg.eps_graft,
                        gm.name(),
                    )
                })
                .collect::<Result<Vec<_>, _>>()?;
            step_d.scaled_per_group(&factors)?
        }
    };
    Ok(crate::core::axpy(&scratch, &grafted, 1.0)?)
}
