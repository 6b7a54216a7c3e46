//! Quadratic sanity problem: `f(w) = 0.5 * sum_g curvature_g * |w_g|^2`.
//!
//! The gradient does not depend on the sampled example, so runs are
//! deterministic regardless of sampling mode. Multiple groups with distinct
//! curvatures give layer-wise grafting something non-trivial to rescale.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::json;

use crate::core::{Gradient, ModelParams, ParamGroup, ParamVector};

use super::{Problem, ProblemError};

#[derive(Clone, Debug)]
pub struct QuadraticProblem {
    groups: Vec<(String, usize, f64)>,
}

impl QuadraticProblem {
    /// Single group named `w` with unit curvature.
    pub fn new(dim: usize) -> Result<Self, ProblemError> {
        Self::with_groups(vec![("w".to_string(), dim, 1.0)])
    }

    /// `(name, dim, curvature)` per group.
    pub fn with_groups(groups: Vec<(String, usize, f64)>) -> Result<Self, ProblemError> {
        if groups.is_empty() || groups.iter().map(|g| g.1).sum::<usize>() == 0 {
            return Err(ProblemError::Invalid(
                "quadratic needs at least one coordinate".into(),
            ));
        }
        for (name, _, curvature) in &groups {
            if !(curvature.is_finite() && *curvature > 0.0) {
                return Err(ProblemError::Invalid(format!(
                    "curvature for group {name:?} must be positive, got {curvature}"
                )));
            }
        }
        Ok(QuadraticProblem { groups })
    }
}

impl Problem for QuadraticProblem {
    fn dim(&self) -> usize {
        self.groups.iter().map(|g| g.1).sum()
    }

    fn train_size(&self) -> usize {
        1
    }

    fn initial_params(&self, rng: &mut ChaCha8Rng) -> ModelParams {
        let groups = self
            .groups
            .iter()
            .map(|(name, dim, _)| {
                let values: Vec<f64> = (0..*dim)
                    .map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                ParamGroup::new(name.clone(), ParamVector::new(values).unwrap()).unwrap()
            })
            .collect();
        ModelParams::new(groups).unwrap()
    }

    fn loss(&self, w: &ModelParams, _example: usize) -> f64 {
        w.groups()
            .iter()
            .zip(&self.groups)
            .map(|(g, (_, _, c))| 0.5 * c * g.values().iter().map(|v| v * v).sum::<f64>())
            .sum()
    }

    fn grad(&self, w: &ModelParams, _example: usize) -> Result<Gradient, ProblemError> {
        let groups = w
            .groups()
            .iter()
            .zip(&self.groups)
            .map(|(g, (_, _, c))| {
                let values: Vec<f64> = g.values().iter().map(|v| c * v).collect();
                Ok(ParamGroup::new(g.name(), ParamVector::new(values)?)?)
            })
            .collect::<Result<Vec<_>, ProblemError>>()?;
        Ok(Gradient::from_groups(groups)?)
    }

    fn train_loss(&self, w: &ModelParams) -> f64 {
        self.loss(w, 0)
    }

    fn test_error(&self, w: &ModelParams) -> f64 {
        self.train_loss(w).min(1.0)
    }

    fn design_json(&self) -> serde_json::Value {
        json!({
            "kind": "quadratic",
            "groups": self.groups.iter()
                .map(|(name, dim, c)| json!({"name": name, "dim": dim, "curvature": c}))
                .collect::<Vec<_>>(),
        })
    }
}
