//! Unified second-moment adaptive optimizer.
//!
//! One parameterization (`beta1`, `beta2`, `epsilon`, precondition flag,
//! schedule) covers SGD, momentum-SGD, AdaGrad, RMSprop, and Adam:
//!
//! ```text
//! m1 <- beta1 * m1 + g        m2 <- beta2 * m2 + g^2     (entrywise)
//! step = -eta_t * m1 / sqrt(m2 + eps)    (or -eta_t * m1 unpreconditioned)
//! ```
//!
//! Accumulator updates carry no `(1 - beta)` factors; framework-style scaling
//! is absorbed into the schedule. With `epsilon = 0`, a coordinate whose
//! accumulator is exactly zero takes an exactly-zero step (pseudoinverse
//! preconditioning), so untouched coordinates never move.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::core::{CoreError, Gradient, ModelParams, ParamGroup, ParamVector, StepProposal};
use crate::schedules::{Schedule, ScheduleError};

#[derive(Debug, Error)]
pub enum OptimError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("invalid optimizer config: {0}")]
    InvalidConfig(String),
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
    #[error("bias correction undefined for beta1={beta1}, beta2={beta2}, t={t}")]
    BiasCorrectionDomain { beta1: f64, beta2: f64, t: u64 },
    #[error("non-finite value: {0}")]
    Numeric(String),
}

/// Adam's warmup-shaped learning-rate adjustment `sqrt(1 - beta2^t) / (1 - beta1^t)`.
pub fn bias_correction(beta1: f64, beta2: f64, t: u64) -> Result<f64, OptimError> {
    let ok = |b: f64| (0.0..1.0).contains(&b);
    if t < 1 || !ok(beta1) || !ok(beta2) {
        return Err(OptimError::BiasCorrectionDomain { beta1, beta2, t });
    }
    let ti = t as i32;
    Ok((1.0 - beta2.powi(ti)).sqrt() / (1.0 - beta1.powi(ti)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Sgd,
    MomentumSgd,
    Adagrad,
    Rmsprop,
    Adam,
}

impl Preset {
    pub fn parse(name: &str) -> Result<Self, OptimError> {
        match name {
            "sgd" => Ok(Preset::Sgd),
            "momentum_sgd" => Ok(Preset::MomentumSgd),
            "adagrad" => Ok(Preset::Adagrad),
            "rmsprop" => Ok(Preset::Rmsprop),
            "adam" => Ok(Preset::Adam),
            other => Err(OptimError::UnknownPreset(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Preset::Sgd => "sgd",
            Preset::MomentumSgd => "momentum_sgd",
            Preset::Adagrad => "adagrad",
            Preset::Rmsprop => "rmsprop",
            Preset::Adam => "adam",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdaptiveConfig {
    pub label: String,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// `false` omits the `sqrt(m2 + eps)` denominator, recovering momentum-SGD.
    pub precondition: bool,
    pub bias_correct: bool,
    pub lr: Schedule,
}

impl AdaptiveConfig {
    /// Standard parameterizations. Momentum defaults to 0.9 everywhere except
    /// plain SGD and RMSprop; AdaGrad keeps a non-decaying accumulator
    /// (`beta2 = 1`); all adaptive presets use `epsilon = 0`.
    pub fn preset(preset: Preset, lr: Schedule) -> AdaptiveConfig {
        let (beta1, beta2, precondition, bias_correct) = match preset {
            Preset::Sgd => (0.0, 0.0, false, false),
            Preset::MomentumSgd => (0.9, 0.0, false, false),
            Preset::Adagrad => (0.9, 1.0, true, false),
            Preset::Rmsprop => (0.0, 0.999, true, false),
            Preset::Adam => (0.9, 0.999, true, true),
        };
        AdaptiveConfig {
            label: preset.name().to_string(),
            beta1,
            beta2,
            epsilon: 0.0,
            precondition,
            bias_correct,
            lr,
        }
    }

    pub fn validate(&self) -> Result<(), OptimError> {
        if !(0.0..1.0).contains(&self.beta1) {
            return Err(OptimError::InvalidConfig(format!(
                "beta1 must be in [0, 1), got {}",
                self.beta1
            )));
        }
        if !(0.0..=1.0).contains(&self.beta2) {
            return Err(OptimError::InvalidConfig(format!(
                "beta2 must be in [0, 1], got {}",
                self.beta2
            )));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(OptimError::InvalidConfig(format!(
                "epsilon must be finite and >= 0, got {}",
                self.epsilon
            )));
        }
        if self.bias_correct && self.beta2 >= 1.0 {
            return Err(OptimError::InvalidConfig(
                "bias correction requires beta2 < 1".into(),
            ));
        }
        self.lr.validate()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
struct StateGroup {
    name: String,
    m1: Vec<f64>,
    m2: Vec<f64>,
}

/// First/second-moment accumulators plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    groups: Vec<StateGroup>,
    t: u64,
}

impl OptimizerState {
    /// Zero accumulators congruent to `model`, step counter 0.
    pub fn init(model: &ModelParams) -> OptimizerState {
        OptimizerState {
            groups: model
                .groups()
                .iter()
                .map(|g| StateGroup {
                    name: g.name().to_string(),
                    m1: vec![0.0; g.len()],
                    m2: vec![0.0; g.len()],
                })
                .collect(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn second_moment(&self, group: &str) -> Option<&[f64]> {
        self.groups
            .iter()
            .find(|g| g.name == group)
            .map(|g| g.m2.as_slice())
    }

    fn check_congruent(&self, g: &Gradient) -> Result<(), OptimError> {
        if self.groups.len() != g.groups().len() {
            return Err(CoreError::ShapeMismatch(format!(
                "state has {} groups, gradient has {}",
                self.groups.len(),
                g.groups().len()
            ))
            .into());
        }
        for (sg, gg) in self.groups.iter().zip(g.groups()) {
            if sg.name != gg.name() || sg.m1.len() != gg.len() {
                return Err(CoreError::ShapeMismatch(format!(
                    "state group {:?} (len {}) vs gradient group {:?} (len {})",
                    sg.name,
                    sg.m1.len(),
                    gg.name(),
                    gg.len()
                ))
                .into());
            }
        }
        Ok(())
    }
}

/// Initialize zeroed accumulators for `model`.
pub fn init_state(model: &ModelParams) -> OptimizerState {
    OptimizerState::init(model)
}

/// One optimizer step: update accumulators, then propose the update.
///
/// The returned proposal is the displacement `w_next - w`; callers apply it
/// with [`crate::core::axpy`]. Descent convention: the proposal opposes the
/// accumulated gradient direction.
pub fn adaptive_step(
    cfg: &AdaptiveConfig,
    st: &mut OptimizerState,
    g: &Gradient,
) -> Result<StepProposal, OptimError> {
    st.check_congruent(g)?;
    st.t += 1;
    let mut eta = cfg.lr.evaluate(st.t)?;
    if cfg.bias_correct {
        eta *= bias_correction(cfg.beta1, cfg.beta2, st.t)?;
    }

    let mut groups = Vec::with_capacity(st.groups.len());
    for (sg, gg) in st.groups.iter_mut().zip(g.groups()) {
        let mut delta = Vec::with_capacity(sg.m1.len());
        for (k, &gv) in gg.values().iter().enumerate() {
            sg.m1[k] = cfg.beta1 * sg.m1[k] + gv;
            sg.m2[k] = cfg.beta2 * sg.m2[k] + gv * gv;
            let d = if cfg.precondition {
                let denom_sq = sg.m2[k] + cfg.epsilon;
                if denom_sq == 0.0 {
                    // pseudoinverse rule: no history, no movement
                    0.0
                } else {
                    -eta * sg.m1[k] / denom_sq.sqrt()
                }
            } else {
                -eta * sg.m1[k]
            };
            delta.push(d);
        }
        groups.push(ParamGroup::new(sg.name.clone(), ParamVector::new(delta)?)?);
    }
    Ok(StepProposal::from_groups(groups)?)
}

/// Anything that can turn `(w_t, g_t)` into a proposed displacement.
pub trait StepOptimizer {
    fn propose(&mut self, w: &ModelParams, g: &Gradient) -> Result<StepProposal, OptimError>;
    fn step_count(&self) -> u64;
    fn label(&self) -> &str;
    /// Scalar multiplier applied at the most recent step (schedule value times
    /// bias correction for plain optimizers; norm ratio for grafted ones).
    fn last_effective_scale(&self) -> f64;
}

/// The update interface of frameworks whose optimizers mutate weights
/// in place; the black-box grafting path only assumes this.
pub trait InPlaceOptimizer {
    fn update_in_place(&mut self, w: &mut ModelParams, g: &Gradient) -> Result<(), OptimError>;
}

impl<T: StepOptimizer> InPlaceOptimizer for T {
    fn update_in_place(&mut self, w: &mut ModelParams, g: &Gradient) -> Result<(), OptimError> {
        let step = self.propose(w, g)?;
        w.add_scaled(&step, 1.0)?;
        Ok(())
    }
}

/// A config paired with its mutable state.
#[derive(Clone, Debug)]
pub struct AdaptiveOptimizer {
    cfg: AdaptiveConfig,
    state: OptimizerState,
    last_scale: f64,
}

impl AdaptiveOptimizer {
    pub fn new(cfg: AdaptiveConfig, model: &ModelParams) -> Result<Self, OptimError> {
        cfg.validate()?;
        Ok(AdaptiveOptimizer {
            state: OptimizerState::init(model),
            cfg,
            last_scale: 0.0,
        })
    }

    pub fn config(&self) -> &AdaptiveConfig {
        &self.cfg
    }

    pub fn state(&self) -> &OptimizerState {
        &self.state
    }
}

impl StepOptimizer for AdaptiveOptimizer {
    fn propose(&mut self, _w: &ModelParams, g: &Gradient) -> Result<StepProposal, OptimError> {
        let step = adaptive_step(&self.cfg, &mut self.state, g)?;
        let mut eta = self.cfg.lr.evaluate(self.state.t)?;
        if self.cfg.bias_correct {
            eta *= bias_correction(self.cfg.beta1, self.cfg.beta2, self.state.t)?;
        }
        self.last_scale = eta;
        Ok(step)
    }

    fn step_count(&self) -> u64 {
        self.state.t
    }

    fn label(&self) -> &str {
        &self.cfg.label
    }

    fn last_effective_scale(&self) -> f64 {
        self.last_scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grad(values: &[f64]) -> Gradient {
        Gradient::single("w", values.to_vec()).unwrap()
    }

    fn model(values: &[f64]) -> ModelParams {
        ModelParams::single("w", values.to_vec()).unwrap()
    }

    fn flat(p: &StepProposal) -> Vec<f64> {
        p.groups()
            .iter()
            .flat_map(|g| g.values().iter().copied())
            .collect()
    }

    #[test]
    fn init_state_is_zero() {
        let m = ModelParams::new(vec![
            crate::core::ParamGroup::new("a", ParamVector::zeros(3)).unwrap(),
            crate::core::ParamGroup::new("b", ParamVector::zeros(2)).unwrap(),
        ])
        .unwrap();
        let st = init_state(&m);
        assert_eq!(st.step_count(), 0);
        assert_eq!(st.groups.len(), 2);
        assert!(st.groups.iter().all(|g| g.m1.iter().all(|&v| v == 0.0)));
        assert!(st.groups.iter().all(|g| g.m2.iter().all(|&v| v == 0.0)));
        assert_eq!(init_state(&m), st);
    }

    #[test]
    fn plain_sgd_step() {
        let cfg = AdaptiveConfig::preset(Preset::Sgd, Schedule::constant(0.1));
        let mut st = init_state(&model(&[0.0, 0.0]));
        let step = adaptive_step(&cfg, &mut st, &grad(&[2.0, -1.0])).unwrap();
        let v = flat(&step);
        assert!((v[0] - -0.2).abs() < 1e-15);
        assert!((v[1] - 0.1).abs() < 1e-15);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn adagrad_first_step_is_sign() {
        // beta1 = 0 so the first step is -g / sqrt(g^2) = -sign(g)
        let mut cfg = AdaptiveConfig::preset(Preset::Adagrad, Schedule::constant(1.0));
        cfg.beta1 = 0.0;
        let mut st = init_state(&model(&[0.0, 0.0]));
        let step = adaptive_step(&cfg, &mut st, &grad(&[3.0, 4.0])).unwrap();
        assert_eq!(flat(&step), vec![-1.0, -1.0]);
        assert_eq!(st.second_moment("w").unwrap(), &[9.0, 16.0]);
    }

    #[test]
    fn pseudoinverse_zero_history_coordinate_is_exactly_zero() {
        let mut cfg = AdaptiveConfig::preset(Preset::Adagrad, Schedule::constant(1.0));
        cfg.beta1 = 0.0;
        let mut st = init_state(&model(&[0.0, 0.0]));
        let step = adaptive_step(&cfg, &mut st, &grad(&[0.0, 5.0])).unwrap();
        assert_eq!(flat(&step)[0].to_bits(), 0.0f64.to_bits());
        assert_eq!(flat(&step)[1], -1.0);
    }

    #[test]
    fn momentum_accumulates() {
        let mut cfg = AdaptiveConfig::preset(Preset::MomentumSgd, Schedule::constant(1.0));
        cfg.beta1 = 0.9;
        let mut st = init_state(&model(&[0.0]));
        adaptive_step(&cfg, &mut st, &grad(&[1.0])).unwrap();
        let second = adaptive_step(&cfg, &mut st, &grad(&[1.0])).unwrap();
        assert!((flat(&second)[0] - -1.9).abs() < 1e-15);
    }

    #[test]
    fn bias_correction_known_values() {
        let v = bias_correction(0.9, 0.999, 1).unwrap();
        assert!((v - 0.316228).abs() < 1e-6);
        let limit = bias_correction(0.9, 0.999, 1_000_000).unwrap();
        assert!((limit - 1.0).abs() < 1e-9);
        let no_momentum = bias_correction(0.0, 0.999, 1).unwrap();
        assert!((no_momentum - 0.001f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn bias_correction_domain_errors() {
        assert!(bias_correction(1.0, 0.999, 1).is_err());
        assert!(bias_correction(0.9, 1.0, 1).is_err());
        assert!(bias_correction(0.9, 0.999, 0).is_err());
    }

    #[test]
    fn bias_correction_warmup_shape() {
        // The factor dips while the momentum denominator saturates (first
        // ~1/(1-beta1) steps), bottoms out near t = 12, then climbs to 1.
        let at = |t| bias_correction(0.9, 0.999, t).unwrap();
        assert!(at(2) < at(1));
        let min_t = (1..=100u64)
            .min_by(|&a, &b| at(a).total_cmp(&at(b)))
            .unwrap();
        assert!((5..=20).contains(&min_t), "minimum at t={min_t}");
        let mut prev = at(20);
        for t in 21..=10_000u64 {
            let v = at(t);
            assert!(v > prev, "not increasing at t={t}");
            assert!(v <= 1.05);
            prev = v;
        }
        assert!((at(100_000) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn presets_match_contract() {
        let lr = Schedule::constant(1.0);
        let adagrad = AdaptiveConfig::preset(Preset::Adagrad, lr.clone());
        assert_eq!(adagrad.beta2, 1.0);
        assert_eq!(adagrad.epsilon, 0.0);
        assert!(adagrad.precondition);
        assert_eq!(adagrad.beta1, 0.9);

        let adam = AdaptiveConfig::preset(Preset::Adam, lr.clone());
        assert!(adam.bias_correct);
        assert_eq!(adam.beta2, 0.999);

        let sgd = AdaptiveConfig::preset(Preset::Sgd, lr.clone());
        assert!(!sgd.precondition);
        assert_eq!(sgd.beta1, 0.0);

        assert!(Preset::parse("adamw").is_err());
    }

    #[test]
    fn bias_correct_requires_decaying_beta2() {
        let mut cfg = AdaptiveConfig::preset(Preset::Adagrad, Schedule::constant(1.0));
        cfg.bias_correct = true;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn adagrad_matches_closed_form_reference() {
        // Independent reimplementation of -eta * g_t / sqrt(sum_{s<=t} g_s^2).
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let dim = 10;
        let mut cfg = AdaptiveConfig::preset(Preset::Adagrad, Schedule::constant(0.3));
        cfg.beta1 = 0.0;
        let m = model(&vec![0.0; dim]);
        let mut st = init_state(&m);
        let mut sumsq = vec![0.0f64; dim];
        for _ in 0..100 {
            let gv: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
            let step = adaptive_step(&cfg, &mut st, &grad(&gv)).unwrap();
            let got = flat(&step);
            for k in 0..dim {
                sumsq[k] += gv[k] * gv[k];
                let expect = if sumsq[k] == 0.0 {
                    0.0
                } else {
                    -0.3 * gv[k] / sumsq[k].sqrt()
                };
                let denom = expect.abs().max(1e-30);
                assert!(
                    (got[k] - expect).abs() / denom < 1e-10,
                    "coordinate {k}: got {} expected {expect}",
                    got[k]
                );
            }
        }
    }

    #[test]
    fn sgd_recovery_exact() {
        let cfg = AdaptiveConfig::preset(Preset::Sgd, Schedule::InverseSqrt { c: 0.5 });
        let mut w = model(&[1.0, -2.0, 0.25]);
        let mut st = init_state(&w);
        for t in 1..=50u64 {
            let gv: Vec<f64> = w.flatten().iter().map(|v| v * 0.5 + 0.1).collect();
            let step = adaptive_step(&cfg, &mut st, &grad(&gv)).unwrap();
            let eta = 0.5 / (t as f64).sqrt();
            let expect: Vec<f64> = w
                .flatten()
                .iter()
                .zip(&gv)
                .map(|(wv, gv)| wv - eta * gv)
                .collect();
            w = crate::core::axpy(&w, &step, 1.0).unwrap();
            assert_eq!(w.flatten(), expect);
        }
    }

    proptest! {
        #[test]
        fn second_moment_stays_nonnegative(
            beta2 in 0.0f64..=1.0,
            seq in proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, 4), 1..30)
        ) {
            let cfg = AdaptiveConfig {
                label: "test".into(),
                beta1: 0.5,
                beta2,
                epsilon: 0.0,
                precondition: true,
                bias_correct: false,
                lr: Schedule::constant(0.1),
            };
            let m = model(&[0.0; 4]);
            let mut st = init_state(&m);
            for gv in &seq {
                adaptive_step(&cfg, &mut st, &grad(gv)).unwrap();
                for v in st.second_moment("w").unwrap() {
                    prop_assert!(*v >= 0.0);
                }
            }
        }

        #[test]
        fn zero_gradient_coordinate_never_moves(
            steps in 1usize..50,
            live in proptest::collection::vec(-5.0f64..5.0, 1..50)
        ) {
            // coordinate 0 never sees gradient; it must stay bitwise zero
            let mut cfg = AdaptiveConfig::preset(Preset::Adagrad, Schedule::constant(1.0));
            cfg.beta1 = 0.7;
            let m = model(&[0.0, 0.0]);
            let mut st = init_state(&m);
            let mut w = m.clone();
            for i in 0..steps {
                let gv = [0.0, live[i % live.len()]];
                let step = adaptive_step(&cfg, &mut st, &grad(&gv)).unwrap();
                prop_assert_eq!(flat(&step)[0].to_bits(), 0.0f64.to_bits());
                w = crate::core::axpy(&w, &step, 1.0).unwrap();
            }
            prop_assert_eq!(w.flatten()[0].to_bits(), 0.0f64.to_bits());
        }
    }
}
