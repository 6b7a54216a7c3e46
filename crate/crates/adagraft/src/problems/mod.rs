//! Synthetic training and online-learning problems.
//!
//! Everything is a linear model on purpose: losses and population metrics
//! have closed forms, so tests carry no Monte-Carlo noise.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::core::{CoreError, Gradient, ModelParams};

mod online;
mod quadratic;
mod sparse_hinge;
mod wilson;

pub use online::{regret, regret_rhs_diag, regret_vs_horizon, OnlineLinearSequence};
pub use quadratic::QuadraticProblem;
pub use sparse_hinge::{hinge_grad, sparse_hinge_test_error, SparseHingeInstance};
pub use wilson::{regression_grad, sign_span_check, WilsonRegressionInstance};

#[derive(Debug, Error, PartialEq)]
pub enum ProblemError {
    #[error("invalid problem instance: {0}")]
    Invalid(String),
    #[error(transparent)]
    Core(#[from] CoreError),
}

/// How the training loop draws examples each step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// Uniform with replacement from the training pool.
    Iid,
    /// Sequential passes over the training pool in its stored order.
    Epoch,
    /// Every step uses the whole training pool.
    FullBatch,
}

/// A stochastic optimization problem with a finite training pool and a
/// closed-form population metric.
pub trait Problem: Send + Sync {
    fn dim(&self) -> usize;

    /// Number of training examples; example ids are `0..train_size()`.
    fn train_size(&self) -> usize;

    fn initial_params(&self, rng: &mut ChaCha8Rng) -> ModelParams;

    fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        use rand::Rng;
        rng.random_range(0..self.train_size())
    }

    fn loss(&self, w: &ModelParams, example: usize) -> f64;

    fn grad(&self, w: &ModelParams, example: usize) -> Result<Gradient, ProblemError>;

    /// Exact mean loss over the training pool.
    fn train_loss(&self, w: &ModelParams) -> f64 {
        let n = self.train_size();
        (0..n).map(|i| self.loss(w, i)).sum::<f64>() / n as f64
    }

    /// Exact population error in [0, 1].
    fn test_error(&self, w: &ModelParams) -> f64;

    fn default_sampling(&self) -> SamplingMode {
        SamplingMode::Iid
    }

    /// Instance description (design data, labels) for inspection.
    fn design_json(&self) -> serde_json::Value;
}
