//! Learning-rate schedules, composable by product.
//!
//! Step index `t` starts at 1, matching the optimizer loop. Every variant is a
//! pure closed form, so evaluation is deterministic and freely shareable.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("step index must be >= 1, got {0}")]
    StepOutOfDomain(u64),
    #[error("invalid schedule: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    /// `c`
    Constant { c: f64 },
    /// `c / t`
    InverseTime { c: f64 },
    /// `c / sqrt(t)`
    InverseSqrt { c: f64 },
    /// `c * gamma^t` with `gamma < 1`
    ExpDecay { c: f64, gamma: f64 },
    /// `c * gamma^t` with `gamma > 1`
    ExpGrow { c: f64, gamma: f64 },
    /// `cos(c0 + c1 * t)`
    Cosine { c0: f64, c1: f64 },
    /// Linear ramp from 0 to `peak` over `warmup_steps`, then multiplied by
    /// `drop_factor` once per passed drop step.
    WarmupStaircase {
        peak: f64,
        warmup_steps: u64,
        drop_steps: Vec<u64>,
        drop_factor: f64,
    },
    /// `c0 + c1 * t`, the fitted linear correction shape.
    Linear { c0: f64, c1: f64 },
    /// `c * t^alpha`, the fitted power-law correction shape.
    Power { c: f64, alpha: f64 },
    /// Product of the child schedules' values.
    Product { factors: Vec<Schedule> },
}

impl Schedule {
    pub fn constant(c: f64) -> Self {
        Schedule::Constant { c }
    }

    /// Multiply this schedule by another, flattening nested products.
    pub fn times(self, other: Schedule) -> Schedule {
        let mut factors = match self {
            Schedule::Product { factors } => factors,
            s => vec![s],
        };
        match other {
            Schedule::Product { factors: mut f } => factors.append(&mut f),
            s => factors.push(s),
        }
        Schedule::Product { factors }
    }

    pub fn evaluate(&self, t: u64) -> Result<f64, ScheduleError> {
        if t < 1 {
            return Err(ScheduleError::StepOutOfDomain(t));
        }
        Ok(self.eval_at(t))
    }

    fn eval_at(&self, t: u64) -> f64 {
        let tf = t as f64;
        match self {
            Schedule::Constant { c } => *c,
            Schedule::InverseTime { c } => c / tf,
            Schedule::InverseSqrt { c } => c / tf.sqrt(),
            Schedule::ExpDecay { c, gamma } | Schedule::ExpGrow { c, gamma } => c * gamma.powf(tf),
            Schedule::Cosine { c0, c1 } => (c0 + c1 * tf).cos(),
            Schedule::WarmupStaircase {
                peak,
                warmup_steps,
                drop_steps,
                drop_factor,
            } => {
                if t <= *warmup_steps {
                    peak * tf / (*warmup_steps as f64)
                } else {
                    let passed = drop_steps.iter().filter(|&&s| s <= t).count() as i32;
                    peak * drop_factor.powi(passed)
                }
            }
            Schedule::Linear { c0, c1 } => c0 + c1 * tf,
            Schedule::Power { c, alpha } => c * tf.powf(*alpha),
            Schedule::Product { factors } => factors.iter().map(|s| s.eval_at(t)).product(),
        }
    }

    pub fn validate(&self) -> Result<(), ScheduleError> {
        let positive = |name: &str, v: f64| require_positive(name, v, self);
        match self {
            Schedule::Constant { c }
            | Schedule::InverseTime { c }
            | Schedule::InverseSqrt { c } => positive("c", *c),
            Schedule::ExpDecay { c, gamma } => {
                positive("c", *c)?;
                if !(*gamma > 0.0 && *gamma < 1.0) {
                    return Err(ScheduleError::Invalid(format!(
                        "exp_decay requires 0 < gamma < 1, got {gamma}"
                    )));
                }
                Ok(())
            }
            Schedule::ExpGrow { c, gamma } => {
                positive("c", *c)?;
                if !(*gamma > 1.0 && gamma.is_finite()) {
                    return Err(ScheduleError::Invalid(format!(
                        "exp_grow requires gamma > 1, got {gamma}"
                    )));
                }
                Ok(())
            }
            Schedule::Cosine { c0, c1 } => {
                if !c0.is_finite() || !c1.is_finite() {
                    return Err(ScheduleError::Invalid(
                        "cosine constants must be finite".into(),
                    ));
                }
                Ok(())
            }
            Schedule::WarmupStaircase {
                peak,
                warmup_steps,
                drop_steps,
                drop_factor,
            } => {
                positive("peak", *peak)?;
                if !(*drop_factor > 0.0 && *drop_factor <= 1.0) {
                    return Err(ScheduleError::Invalid(format!(
                        "drop_factor must be in (0, 1], got {drop_factor}"
                    )));
                }
                for pair in drop_steps.windows(2) {
                    if pair[1] <= pair[0] {
                        return Err(ScheduleError::Invalid(
                            "drop_steps must be strictly increasing".into(),
                        ));
                    }
                }
                if let Some(&first) = drop_steps.first() {
                    if first <= *warmup_steps {
                        return Err(ScheduleError::Invalid(
                            "first drop step must come after warmup".into(),
                        ));
                    }
                }
                Ok(())
            }
            Schedule::Linear { c0, c1 } => {
                if !c0.is_finite() || !c1.is_finite() || *c0 < 0.0 || c0 + c1 <= 0.0 {
                    return Err(ScheduleError::Invalid(format!(
                        "linear requires c0 >= 0 and c0 + c1 > 0, got ({c0}, {c1})"
                    )));
                }
                Ok(())
            }
            Schedule::Power { c, alpha } => {
                positive("c", *c)?;
                if !alpha.is_finite() {
                    return Err(ScheduleError::Invalid(
                        "power exponent must be finite".into(),
                    ));
                }
                Ok(())
            }
            Schedule::Product { factors } => {
                for f in factors {
                    f.validate()?;
                }
                Ok(())
            }
        }
    }

    /// Warmup length when the schedule (or any product factor) declares one.
    /// Used to pick the default correction-fit window.
    pub fn warmup_length(&self) -> Option<u64> {
        match self {
            Schedule::WarmupStaircase { warmup_steps, .. } => Some(*warmup_steps),
            Schedule::Product { factors } => factors.iter().filter_map(|f| f.warmup_length()).max(),
            _ => None,
        }
    }
}

fn require_positive(name: &str, v: f64, s: &Schedule) -> Result<(), ScheduleError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ScheduleError::Invalid(format!(
            "{name} must be positive and finite in {s:?}, got {v}"
        )))
    }
}
