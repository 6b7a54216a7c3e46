//! Sparse hinge-loss classification where quick per-coordinate adaptation
//! pays off.
//!
//! The population is uniform over all `d` standard basis vectors, every label
//! is +1, and the loss is `max(0, 1 - y <z, w>)`. The training pool is the
//! first `floor(fill * d)` basis vectors of a seeded permutation, so one
//! epoch visits `floor(fill * d)` distinct coordinates. The all-ones vector
//! attains zero loss on the whole population.
//!
//! Population error counts the basis vectors that still carry positive hinge
//! loss, i.e. margin below 1. A coordinate only stops contributing error once
//! its weight reaches the margin; merely being positive is not enough.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::core::{Gradient, ModelParams, ParamVector};

use super::{Problem, ProblemError, SamplingMode};

/// Subgradient of `max(0, 1 - y <z, w>)`: `-y z` below margin 1, zero at or
/// above it (the zero choice keeps converged iterates fixed).
pub fn hinge_grad(w: &ParamVector, z: &[f64], y: f64) -> Vec<f64> {
    let margin: f64 = w
        .as_slice()
        .iter()
        .zip(z)
        .map(|(wv, zv)| wv * zv)
        .sum::<f64>()
        * y;
    if margin < 1.0 {
        z.iter().map(|zv| -y * zv).collect()
    } else {
        vec![0.0; z.len()]
    }
}

#[derive(Clone, Debug)]
pub struct SparseHingeInstance {
    d: usize,
    fill: f64,
    train: Vec<usize>,
}

impl SparseHingeInstance {
    pub fn new(d: usize, fill: f64, seed: u64) -> Result<Self, ProblemError> {
        if d == 0 {
            return Err(ProblemError::Invalid("dimension must be positive".into()));
        }
        if !(fill > 0.0 && fill <= 1.0) {
            return Err(ProblemError::Invalid(format!(
                "fill fraction must be in (0, 1], got {fill}"
            )));
        }
        let mut perm: Vec<usize> = (0..d).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let m = ((fill * d as f64).floor() as usize).max(1);
        perm.truncate(m);
        Ok(SparseHingeInstance {
            d,
            fill,
            train: perm,
        })
    }

    pub fn fill(&self) -> f64 {
        self.fill
    }

    /// Basis indices of the training examples, in visit order.
    pub fn train_basis(&self) -> &[usize] {
        &self.train
    }

    fn coord(&self, example: usize) -> usize {
        self.train[example]
    }
}

/// Exact population error: fraction of the `d` basis vectors on which `w`
/// still has positive hinge loss.
pub fn sparse_hinge_test_error(inst: &SparseHingeInstance, w: &ModelParams) -> f64 {
    let values = &w.groups()[0];
    let wrong = values.values().iter().filter(|&&wi| wi < 1.0).count();
    wrong as f64 / inst.d as f64
}

impl Problem for SparseHingeInstance {
    fn dim(&self) -> usize {
        self.d
    }

    fn train_size(&self) -> usize {
        self.train.len()
    }

    fn initial_params(&self, _rng: &mut ChaCha8Rng) -> ModelParams {
        ModelParams::single("w", vec![0.0; self.d]).unwrap()
    }

    fn loss(&self, w: &ModelParams, example: usize) -> f64 {
        let wi = w.groups()[0].values()[self.coord(example)];
        (1.0 - wi).max(0.0)
    }

    fn grad(&self, w: &ModelParams, example: usize) -> Result<Gradient, ProblemError> {
        let j = self.coord(example);
        let wi = w.groups()[0].values()[j];
        let mut values = vec![0.0; self.d];
        if wi < 1.0 {
            values[j] = -1.0;
        }
        Ok(Gradient::single("w", values)?)
    }

    fn test_error(&self, w: &ModelParams) -> f64 {
        sparse_hinge_test_error(self, w)
    }

    fn default_sampling(&self) -> SamplingMode {
        SamplingMode::Epoch
    }

    fn design_json(&self) -> serde_json::Value {
        json!({
            "kind": "sparse_hinge",
            "d": self.d,
            "fill": self.fill,
            "train_basis": self.train,
            "labels": vec![1.0; self.train.len()],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vector(values: &[f64]) -> ParamVector {
        ParamVector::new(values.to_vec()).unwrap()
    }

    fn basis(d: usize, j: usize) -> Vec<f64> {
        let mut z = vec![0.0; d];
        z[j] = 1.0;
        z
    }

    #[test]
    fn hinge_grad_below_margin() {
        let w = vector(&[0.0, 0.0]);
        assert_eq!(hinge_grad(&w, &basis(2, 0), 1.0), vec![-1.0, 0.0]);
    }

    #[test]
    fn hinge_grad_at_optimum_is_zero() {
        let w = vector(&[1.0, 1.0, 1.0]);
        for j in 0..3 {
            assert_eq!(hinge_grad(&w, &basis(3, j), 1.0), vec![0.0; 3]);
        }
    }

    #[test]
    fn hinge_grad_half_margin() {
        let w = vector(&[0.5, 0.0]);
        assert_eq!(hinge_grad(&w, &basis(2, 0), 1.0), vec![-1.0, 0.0]);
    }

    #[test]
    fn hinge_grad_exactly_at_margin_is_zero() {
        let w = vector(&[1.0]);
        assert_eq!(hinge_grad(&w, &[1.0], 1.0), vec![0.0]);
    }

    #[test]
    fn test_error_zero_weights() {
        let inst = SparseHingeInstance::new(4, 0.5, 1).unwrap();
        let w = ModelParams::single("w", vec![0.0; 4]).unwrap();
        assert_eq!(sparse_hinge_test_error(&inst, &w), 1.0);
    }

    #[test]
    fn test_error_all_ones() {
        let inst = SparseHingeInstance::new(4, 0.5, 1).unwrap();
        let w = ModelParams::single("w", vec![1.0; 4]).unwrap();
        assert_eq!(sparse_hinge_test_error(&inst, &w), 0.0);
    }

    #[test]
    fn one_adagrad_epoch_by_hand() {
        // Two steps of AdaGrad (beta1=0, eta=1, eps=0) on a d=4, fill=0.5
        // instance set the two visited coordinates to exactly 1, leaving
        // population error 1 - fill.
        let inst = SparseHingeInstance::new(4, 0.5, 9).unwrap();
        let mut w = vec![0.0f64; 4];
        let mut acc = [0.0f64; 4];
        for &j in inst.train_basis() {
            // gradient is -e_j while the margin is short
            if w[j] < 1.0 {
                acc[j] += 1.0;
                w[j] += 1.0 / acc[j].sqrt();
            }
        }
        let model = ModelParams::single("w", w).unwrap();
        assert_eq!(sparse_hinge_test_error(&inst, &model), 0.5);
        assert_eq!(model.flatten().iter().filter(|&&v| v == 1.0).count(), 2);
    }

    #[test]
    fn train_set_is_seeded_permutation_prefix() {
        let a = SparseHingeInstance::new(100, 0.3, 7).unwrap();
        let b = SparseHingeInstance::new(100, 0.3, 7).unwrap();
        let c = SparseHingeInstance::new(100, 0.3, 8).unwrap();
        assert_eq!(a.train_basis(), b.train_basis());
        assert_ne!(a.train_basis(), c.train_basis());
        assert_eq!(a.train_size(), 30);
        let mut sorted = a.train_basis().to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 30, "train examples must be distinct");
    }

    #[test]
    fn full_fill_covers_population() {
        let inst = SparseHingeInstance::new(16, 1.0, 3).unwrap();
        assert_eq!(inst.train_size(), 16);
    }
}
