//! Overparameterized least-squares classification where preconditioning
//! hurts generalization.
//!
//! Each sample's feature vector carries the label in coordinate 0, two
//! always-on dummy coordinates (1 and 2), and a private block of coordinates
//! (value = label) that appears in no other sample: width 1 for positive
//! labels, 5 for negative ones. With squared loss, every full-batch gradient
//! is proportional to `X^T y`, so a preconditioner that equalizes coordinate
//! magnitudes keeps its iterates on the scalar span of `sign(X^T y)`. Such a
//! solution leans on the dummy coordinates and predicts +1 on every fresh
//! sample, while the minimum-norm interpolator weights coordinate 0 heavily
//! enough to classify fresh samples of both labels correctly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::core::{Gradient, ModelParams, ParamVector};

use super::{Problem, ProblemError, SamplingMode};

/// Gradient of the squared loss `(<w, x> - y)^2`, namely `2(<w, x> - y) x`.
pub fn regression_grad(w: &ParamVector, x: &[f64], y: f64) -> Vec<f64> {
    let residual: f64 = w.as_slice().iter().zip(x).map(|(a, b)| a * b).sum::<f64>() - y;
    x.iter().map(|xv| 2.0 * residual * xv).collect()
}

#[derive(Clone, Debug)]
pub struct WilsonRegressionInstance {
    n: usize,
    d: usize,
    p: f64,
    labels: Vec<f64>,
    block_width: usize,
}

impl WilsonRegressionInstance {
    /// Labels are +1 with probability `p`, drawn with the given seed. The
    /// ambient dimension defaults to `6n + 3`; private blocks need width at
    /// least 5, so `d >= 5n + 3`.
    pub fn new(n: usize, d: Option<usize>, p: f64, seed: u64) -> Result<Self, ProblemError> {
        if n == 0 {
            return Err(ProblemError::Invalid("need at least one sample".into()));
        }
        if !(p > 0.0 && p < 1.0) {
            return Err(ProblemError::Invalid(format!(
                "label probability must be in (0, 1), got {p}"
            )));
        }
        let d = d.unwrap_or(6 * n + 3);
        if d < 5 * n + 3 {
            return Err(ProblemError::Invalid(format!(
                "dimension {d} too small for {n} samples; need at least {}",
                5 * n + 3
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < p { 1.0 } else { -1.0 })
            .collect();
        Ok(WilsonRegressionInstance {
            n,
            d,
            p,
            labels,
            block_width: (d - 3) / n,
        })
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    fn block_range(&self, i: usize) -> std::ops::Range<usize> {
        let start = 3 + i * self.block_width;
        let used = if self.labels[i] > 0.0 { 1 } else { 5 };
        start..start + used
    }

    /// Dense feature vector of training sample `i`.
    pub fn feature_row(&self, i: usize) -> Vec<f64> {
        let y = self.labels[i];
        let mut x = vec![0.0; self.d];
        x[0] = y;
        x[1] = 1.0;
        x[2] = 1.0;
        for j in self.block_range(i) {
            x[j] = y;
        }
        x
    }

    /// `X^T y` over the training set.
    pub fn design_transpose_labels(&self) -> Vec<f64> {
        let mut u = vec![0.0; self.d];
        for i in 0..self.n {
            let y = self.labels[i];
            u[0] += y * y;
            u[1] += y;
            u[2] += y;
            for j in self.block_range(i) {
                u[j] += y * y;
            }
        }
        u
    }

    /// Sign of the prediction a weight vector makes on a fresh sample with
    /// label `y` (whose private block is unseen, hence weightless).
    fn fresh_prediction(&self, w: &ModelParams, y: f64) -> f64 {
        let v = w.groups()[0].values();
        v[0] * y + v[1] + v[2]
    }

    /// Classification accuracy on a balanced fresh population, in closed
    /// form: a fresh sample only activates coordinate 0 and the dummies.
    pub fn fresh_accuracy(&self, w: &ModelParams) -> f64 {
        let mut correct = 0.0;
        for y in [1.0, -1.0] {
            if self.fresh_prediction(w, y) * y > 0.0 {
                correct += 0.5;
            }
        }
        correct
    }
}

/// True iff every iterate is, coordinatewise, one scalar multiple of
/// `sign(X^T y)` over the coordinates with nonzero accumulator (within 1e-8).
pub fn sign_span_check(inst: &WilsonRegressionInstance, trajectory: &[ModelParams]) -> bool {
    let u = inst.design_transpose_labels();
    let active: Vec<usize> = (0..u.len()).filter(|&j| u[j] != 0.0).collect();
    if active.is_empty() {
        return true;
    }
    trajectory.iter().all(|w| {
        let v = w.groups()[0].values();
        let scalar: f64 =
            active.iter().map(|&j| v[j] * u[j].signum()).sum::<f64>() / active.len() as f64;
        active
            .iter()
            .all(|&j| (v[j] - scalar * u[j].signum()).abs() <= 1e-8)
    })
}

impl Problem for WilsonRegressionInstance {
    fn dim(&self) -> usize {
        self.d
    }

    fn train_size(&self) -> usize {
        self.n
    }

    fn initial_params(&self, _rng: &mut ChaCha8Rng) -> ModelParams {
        ModelParams::single("w", vec![0.0; self.d]).unwrap()
    }

    fn loss(&self, w: &ModelParams, example: usize) -> f64 {
        let x = self.feature_row(example);
        let v = w.groups()[0].values();
        let r: f64 = v.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() - self.labels[example];
        r * r
    }

    fn grad(&self, w: &ModelParams, example: usize) -> Result<Gradient, ProblemError> {
        let x = self.feature_row(example);
        let values = regression_grad(w.groups()[0].params(), &x, self.labels[example]);
        Ok(Gradient::single("w", values)?)
    }

    fn test_error(&self, w: &ModelParams) -> f64 {
        1.0 - self.fresh_accuracy(w)
    }

    fn default_sampling(&self) -> SamplingMode {
        SamplingMode::FullBatch
    }

    fn design_json(&self) -> serde_json::Value {
        json!({
            "kind": "wilson_regression",
            "n": self.n,
            "d": self.d,
            "p": self.p,
            "labels": self.labels,
            "rows": (0..self.n).map(|i| self.feature_row(i)).collect::<Vec<_>>(),
        })
    }
}
