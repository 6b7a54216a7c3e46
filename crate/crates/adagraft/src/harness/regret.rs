//! Empirical check of the diagonal pseudoinverse-AdaGrad regret bound on
//! fixed linear-loss sequences.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::core::{axpy, Gradient, ModelParams};
use crate::optim::{adaptive_step, init_state, AdaptiveConfig};
use crate::parallel::fan_out;
use crate::problems::{regret, regret_rhs_diag, regret_vs_horizon, OnlineLinearSequence};
use crate::schedules::Schedule;

use super::io::fmt_f64;
use super::{derive_seed, HarnessError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegretConfig {
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default = "default_random_sequences")]
    pub random_sequences: usize,
    #[serde(default = "default_adversarial_sequences")]
    pub adversarial_sequences: usize,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_box_bound")]
    pub box_bound: f64,
    /// Trailing coordinates the adversarial sequences never touch; the
    /// pseudoinverse rule must keep them bitwise zero.
    #[serde(default = "default_silent")]
    pub silent_coords: usize,
}

fn default_dim() -> usize {
    20
}

fn default_rounds() -> usize {
    2000
}

fn default_random_sequences() -> usize {
    20
}

fn default_adversarial_sequences() -> usize {
    5
}

// Small enough that the algorithm's martingale loss noise does not mask the
// sqrt-growth of the comparator term in per-sequence sublinearity checks.
fn default_eta() -> f64 {
    0.1
}

fn default_box_bound() -> f64 {
    1.0
}

fn default_silent() -> usize {
    2
}

impl Default for RegretConfig {
    fn default() -> Self {
        RegretConfig {
            dim: default_dim(),
            rounds: default_rounds(),
            random_sequences: default_random_sequences(),
            adversarial_sequences: default_adversarial_sequences(),
            eta: default_eta(),
            box_bound: default_box_bound(),
            silent_coords: default_silent(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RegretOutcome {
    pub sequence: String,
    pub rounds: usize,
    pub regret: f64,
    pub rhs: f64,
    /// `regret / rhs`; 0 when the bound side is 0.
    pub ratio: f64,
    pub avg_regret_mid: f64,
    pub avg_regret_final: f64,
    /// Average regret fell over the final half of the rounds.
    pub sublinear_ok: bool,
    /// Untouched coordinates stayed bitwise zero (None for dense sequences).
    pub silent_frozen: Option<bool>,
}

fn diagonal_pseudoinverse_adagrad(eta: f64) -> AdaptiveConfig {
    AdaptiveConfig {
        label: "adagrad_diag".into(),
        beta1: 0.0,
        beta2: 1.0,
        epsilon: 0.0,
        precondition: true,
        bias_correct: false,
        lr: Schedule::constant(eta),
    }
}

/// Play one sequence with diagonal pseudoinverse AdaGrad from the origin and
/// measure regret against the theorem's right-hand side.
pub fn play_sequence(
    seq: &OnlineLinearSequence,
    eta: f64,
    silent_coords: Option<usize>,
) -> Result<RegretOutcome, HarnessError> {
    let dim = seq.dim();
    let rounds = seq.rounds();
    let cfg = diagonal_pseudoinverse_adagrad(eta);
    let mut w = ModelParams::single("w", vec![0.0; dim])?;
    let mut state = init_state(&w);
    let mut trajectory: Vec<Vec<f64>> = Vec::with_capacity(rounds + 1);
    trajectory.push(w.flatten());
    for t in 0..rounds {
        let g = Gradient::single("w", seq.grad(t).to_vec())?;
        let step = adaptive_step(&cfg, &mut state, &g)?;
        w = axpy(&w, &step, 1.0)?;
        trajectory.push(w.flatten());
    }

    let total = regret(seq, &trajectory);
    let rhs = regret_rhs_diag(seq, &trajectory);
    let horizon = regret_vs_horizon(seq, &trajectory);
    let mid = rounds / 2;
    let avg_regret_mid = horizon[mid - 1] / mid as f64;
    let avg_regret_final = horizon[rounds - 1] / rounds as f64;

    let silent_frozen = silent_coords.map(|silent| {
        trajectory.iter().all(|w| {
            w[dim - silent..]
                .iter()
                .all(|v| v.to_bits() == 0.0f64.to_bits())
        })
    });

    Ok(RegretOutcome {
        sequence: seq.label().to_string(),
        rounds,
        regret: total,
        rhs,
        ratio: if rhs == 0.0 { 0.0 } else { total / rhs },
        avg_regret_mid,
        avg_regret_final,
        sublinear_ok: avg_regret_final < avg_regret_mid,
        silent_frozen,
    })
}

pub fn build_sequences(
    cfg: &RegretConfig,
    master_seed: u64,
) -> Result<Vec<OnlineLinearSequence>, HarnessError> {
    let mut sequences = Vec::with_capacity(cfg.random_sequences + cfg.adversarial_sequences);
    for i in 0..cfg.random_sequences {
        sequences.push(OnlineLinearSequence::random(
            format!("random_{i:02}"),
            cfg.dim,
            cfg.rounds,
            cfg.box_bound,
            derive_seed(master_seed, &["regret_random", &i.to_string()]),
        )?);
    }
    for i in 0..cfg.adversarial_sequences {
        sequences.push(OnlineLinearSequence::coordinate_cycling(
            format!("cycling_{i:02}"),
            cfg.dim,
            cfg.rounds,
            cfg.box_bound,
            cfg.silent_coords,
            i,
        )?);
    }
    Ok(sequences)
}

pub fn regret_suite(
    cfg: &RegretConfig,
    master_seed: u64,
    jobs: usize,
) -> Result<Vec<RegretOutcome>, HarnessError> {
    if cfg.dim <= cfg.silent_coords {
        return Err(HarnessError::InvalidConfig(
            "silent coordinates must leave at least one active".into(),
        ));
    }
    let sequences = build_sequences(cfg, master_seed)?;
    let eta = cfg.eta;
    let silent = cfg.silent_coords;
    let outcomes = fan_out(sequences, jobs, move |seq| {
        let silent_opt = seq.label().starts_with("cycling").then_some(silent);
        play_sequence(&seq, eta, silent_opt)
    });
    outcomes.into_iter().collect()
}

/// Per-sequence CSV: `sequence,regret,rhs,ratio`.
pub fn regret_outcomes_csv(outcomes: &[RegretOutcome]) -> String {
    let mut out = String::from("sequence,regret,rhs,ratio\n");
    for o in outcomes {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            o.sequence,
            fmt_f64(o.regret),
            fmt_f64(o.rhs),
            fmt_f64(o.ratio)
        );
    }
    out
}
