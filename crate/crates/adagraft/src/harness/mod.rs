//! Deterministic training loops and the experiment pipelines built on them.
//!
//! Every run is driven by a master seed; independent streams (instance
//! construction, initialization, data order, grid cells) are derived by
//! hashing the seed with a role label, so re-running any entry point with an
//! equal config reproduces its outputs byte for byte.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::core::{axpy, CoreError, Gradient, ModelParams, ParamGroup, ParamVector};
use crate::graft::{GraftConfig, GraftError, GraftScope, GraftedOptimizer};
use crate::optim::{AdaptiveConfig, AdaptiveOptimizer, OptimError, Preset, StepOptimizer};
use crate::problems::{
    Problem, ProblemError, QuadraticProblem, SamplingMode, SparseHingeInstance,
    WilsonRegressionInstance,
};
use crate::schedules::{Schedule, ScheduleError};
use crate::telemetry::StepNormSeries;

mod correction;
mod grid;
mod io;
mod pathological;
mod regret;

pub use correction::{correction_pipeline, CorrectionOutcome};
pub use grid::{grid, grid_summary_csv, GridCell, GridSpec};
pub use io::{curve_from_csv_str, curve_to_csv_string, read_curve_csv, write_curve_csv};
pub use pathological::{
    pathological_suite, HingeSeedReport, HingeSuiteConfig, NamedRun, PathologicalOutcome,
    PathologicalReport, SeedReport, WilsonSeedReport, WilsonSuiteConfig,
};
pub use regret::{regret_outcomes_csv, regret_suite, RegretConfig, RegretOutcome};

/// Divergence threshold on any observed loss.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Graft(#[from] GraftError),
    #[error(transparent)]
    Telemetry(#[from] crate::telemetry::TelemetryError),
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error("run diverged")]
    Diverged,
}

/// Errors the training loop absorbs as divergence (truncate and flag) rather
/// than propagating: non-finite losses, gradients, steps, or norm ratios.
/// Shape and config errors still fail the run.
fn is_divergence(e: &HarnessError) -> bool {
    fn core_nonfinite(e: &CoreError) -> bool {
        matches!(
            e,
            CoreError::NonFiniteEntry { .. } | CoreError::NonFiniteResult(_)
        )
    }
    fn optim_nonfinite(e: &OptimError) -> bool {
        match e {
            OptimError::Core(c) => core_nonfinite(c),
            OptimError::Numeric(_) => true,
            _ => false,
        }
    }
    match e {
        HarnessError::Diverged => true,
        HarnessError::Core(c) => core_nonfinite(c),
        HarnessError::Optim(o) => optim_nonfinite(o),
        HarnessError::Problem(ProblemError::Core(c)) => core_nonfinite(c),
        HarnessError::Graft(g) => match g {
            GraftError::Core(c) => core_nonfinite(c),
            GraftError::Optim(o) => optim_nonfinite(o),
            GraftError::NonFiniteRatio(_) => true,
            GraftError::Telemetry(_) => false,
        },
        _ => false,
    }
}

/// Stable FNV-1a hash of the master seed plus role labels; used to derive
/// independent RNG streams that survive library upgrades.
pub fn derive_seed(master: u64, labels: &[&str]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    eat(&master.to_le_bytes());
    for label in labels {
        eat(label.as_bytes());
        eat(&[0xff]);
    }
    h
}

// ---------------------------------------------------------------------------
// config specs (the JSON-facing descriptions of problems and optimizers)
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub name: String,
    pub dim: usize,
    #[serde(default = "default_curvature")]
    pub curvature: f64,
}

fn default_curvature() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemSpec {
    Quadratic {
        #[serde(default)]
        dim: Option<usize>,
        #[serde(default)]
        groups: Option<Vec<GroupSpec>>,
    },
    SparseHinge {
        d: usize,
        fill: f64,
    },
    WilsonRegression {
        n: usize,
        #[serde(default)]
        d: Option<usize>,
        #[serde(default = "default_label_probability")]
        p: f64,
    },
}

fn default_label_probability() -> f64 {
    0.75
}

impl ProblemSpec {
    pub fn quadratic(dim: usize) -> ProblemSpec {
        ProblemSpec::Quadratic {
            dim: Some(dim),
            groups: None,
        }
    }

    /// Instantiate with a seed derived from the run's master seed.
    pub fn build(&self, instance_seed: u64) -> Result<Box<dyn Problem>, HarnessError> {
        match self {
            ProblemSpec::Quadratic { dim, groups } => match (dim, groups) {
                (_, Some(gs)) if !gs.is_empty() => Ok(Box::new(QuadraticProblem::with_groups(
                    gs.iter()
                        .map(|g| (g.name.clone(), g.dim, g.curvature))
                        .collect(),
                )?)),
                (Some(d), _) => Ok(Box::new(QuadraticProblem::new(*d)?)),
                _ => Err(HarnessError::InvalidConfig(
                    "quadratic problem needs dim or groups".into(),
                )),
            },
            ProblemSpec::SparseHinge { d, fill } => Ok(Box::new(SparseHingeInstance::new(
                *d,
                *fill,
                instance_seed,
            )?)),
            ProblemSpec::WilsonRegression { n, d, p } => Ok(Box::new(
                WilsonRegressionInstance::new(*n, *d, *p, instance_seed)?,
            )),
        }
    }
}

/// Preset name plus optional overrides, as written in config files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSpec {
    pub preset: String,
    pub lr: Schedule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub precondition: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias_correct: Option<bool>,
}

impl OptimizerSpec {
    pub fn preset(preset: Preset, lr: Schedule) -> OptimizerSpec {
        OptimizerSpec {
            preset: preset.name().to_string(),
            lr,
            label: None,
            beta1: None,
            beta2: None,
            epsilon: None,
            precondition: None,
            bias_correct: None,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> OptimizerSpec {
        self.label = Some(label.into());
        self
    }

    pub fn with_beta1(mut self, beta1: f64) -> OptimizerSpec {
        self.beta1 = Some(beta1);
        self
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> OptimizerSpec {
        self.epsilon = Some(epsilon);
        self
    }

    pub fn with_lr(mut self, lr: Schedule) -> OptimizerSpec {
        self.lr = lr;
        self
    }

    pub fn effective_label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.preset.clone())
    }

    pub fn build_config(&self) -> Result<AdaptiveConfig, HarnessError> {
        let preset = Preset::parse(&self.preset)?;
        let mut cfg = AdaptiveConfig::preset(preset, self.lr.clone());
        cfg.label = self.effective_label();
        if let Some(v) = self.beta1 {
            cfg.beta1 = v;
        }
        if let Some(v) = self.beta2 {
            cfg.beta2 = v;
        }
        if let Some(v) = self.epsilon {
            cfg.epsilon = v;
        }
        if let Some(v) = self.precondition {
            cfg.precondition = v;
        }
        if let Some(v) = self.bias_correct {
            cfg.bias_correct = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// A single run's optimizer: one plain optimizer or a grafted pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RunOptimizerSpec {
    Plain(OptimizerSpec),
    Grafted {
        m: OptimizerSpec,
        d: OptimizerSpec,
        #[serde(default = "default_scope")]
        scope: GraftScope,
        #[serde(default)]
        eps_graft: f64,
    },
}

fn default_scope() -> GraftScope {
    GraftScope::LayerWise
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub steps: u64,
    pub seed: u64,
    #[serde(default = "default_one_u64")]
    pub eval_every: u64,
    #[serde(default = "default_one_usize")]
    pub batch_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling: Option<SamplingMode>,
}

fn default_one_u64() -> u64 {
    1
}

fn default_one_usize() -> usize {
    1
}

impl RunSettings {
    pub fn new(steps: u64, seed: u64) -> RunSettings {
        RunSettings {
            steps,
            seed,
            eval_every: 1,
            batch_size: 1,
            sampling: None,
        }
    }

    pub fn with_eval_every(mut self, eval_every: u64) -> RunSettings {
        self.eval_every = eval_every;
        self
    }

    pub fn with_sampling(mut self, sampling: SamplingMode) -> RunSettings {
        self.sampling = Some(sampling);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> RunSettings {
        self.seed = seed;
        self
    }

    fn validate(&self) -> Result<(), HarnessError> {
        if self.steps < 1 || self.eval_every < 1 || self.batch_size < 1 {
            return Err(HarnessError::InvalidConfig(
                "steps, eval_every, and batch_size must all be >= 1".into(),
            ));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// run outputs
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    pub step: u64,
    pub train_loss: f64,
    pub test_metric: f64,
    pub lr_effective: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingCurve {
    pub points: Vec<CurvePoint>,
    pub diverged: bool,
}

impl TrainingCurve {
    pub fn final_point(&self) -> Option<&CurvePoint> {
        self.points.last()
    }
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub curve: TrainingCurve,
    pub final_params: ModelParams,
    /// Steps actually executed (smaller than requested when diverged).
    pub steps_run: u64,
    pub telemetry: Option<StepNormSeries>,
    pub trajectory: Option<Vec<ModelParams>>,
}

impl RunResult {
    pub fn final_train_loss(&self) -> f64 {
        self.curve
            .final_point()
            .map(|p| p.train_loss)
            .unwrap_or(f64::NAN)
    }

    pub fn final_test_metric(&self) -> f64 {
        self.curve
            .final_point()
            .map(|p| p.test_metric)
            .unwrap_or(f64::NAN)
    }
}

/// Extra knobs for tests and pipelines; not part of the config surface.
#[derive(Clone, Copy, Debug, Default)]
pub struct TrainOptions {
    pub capture_trajectory: bool,
    pub with_telemetry: bool,
}

enum Runner {
    Plain(AdaptiveOptimizer),
    Grafted(Box<GraftedOptimizer<AdaptiveOptimizer, AdaptiveOptimizer>>),
}

impl Runner {
    fn build(
        spec: &RunOptimizerSpec,
        model: &ModelParams,
        with_telemetry: bool,
    ) -> Result<Runner, HarnessError> {
        match spec {
            RunOptimizerSpec::Plain(opt) => Ok(Runner::Plain(AdaptiveOptimizer::new(
                opt.build_config()?,
                model,
            )?)),
            RunOptimizerSpec::Grafted {
                m,
                d,
                scope,
                eps_graft,
            } => {
                let magnitude = AdaptiveOptimizer::new(m.build_config()?, model)?;
                let direction = AdaptiveOptimizer::new(d.build_config()?, model)?;
                let mut grafted = GraftedOptimizer::new(
                    magnitude,
                    direction,
                    GraftConfig::new(*scope, *eps_graft),
                );
                if with_telemetry {
                    grafted = grafted.with_telemetry();
                }
                Ok(Runner::Grafted(Box::new(grafted)))
            }
        }
    }

    fn propose(
        &mut self,
        w: &ModelParams,
        g: &Gradient,
    ) -> Result<crate::core::StepProposal, OptimError> {
        match self {
            Runner::Plain(o) => o.propose(w, g),
            Runner::Grafted(o) => o.propose(w, g),
        }
    }

    fn last_effective_scale(&self) -> f64 {
        match self {
            Runner::Plain(o) => o.last_effective_scale(),
            Runner::Grafted(o) => o.last_effective_scale(),
        }
    }

    fn take_telemetry(&mut self) -> Option<StepNormSeries> {
        match self {
            Runner::Plain(_) => None,
            Runner::Grafted(o) => o.take_telemetry(),
        }
    }
}

// ---------------------------------------------------------------------------
// the training loop
// ---------------------------------------------------------------------------

fn batch_indices(
    sampling: SamplingMode,
    step: u64,
    batch_size: usize,
    train_size: usize,
    problem: &dyn Problem,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    match sampling {
        SamplingMode::Iid => (0..batch_size).map(|_| problem.sample(rng)).collect(),
        SamplingMode::Epoch => {
            let base = (step - 1) as usize * batch_size;
            (0..batch_size).map(|k| (base + k) % train_size).collect()
        }
        SamplingMode::FullBatch => (0..train_size).collect(),
    }
}

/// Mean per-example loss and gradient over a batch.
fn batch_loss_grad(
    problem: &dyn Problem,
    w: &ModelParams,
    batch: &[usize],
) -> Result<(f64, Gradient), HarnessError> {
    let mut loss = 0.0;
    let mut sums: Vec<Vec<f64>> = w.groups().iter().map(|g| vec![0.0; g.len()]).collect();
    for &example in batch {
        loss += problem.loss(w, example);
        let g = problem.grad(w, example)?;
        for (acc, src) in sums.iter_mut().zip(g.groups()) {
            for (a, v) in acc.iter_mut().zip(src.values()) {
                *a += v;
            }
        }
    }
    let scale = 1.0 / batch.len() as f64;
    loss *= scale;
    let groups = w
        .groups()
        .iter()
        .zip(sums)
        .map(|(g, mut values)| {
            for v in &mut values {
                *v *= scale;
            }
            Ok(ParamGroup::new(g.name(), ParamVector::new(values)?)?)
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    Ok((loss, Gradient::from_groups(groups)?))
}

fn losses_diverged(loss: f64) -> bool {
    !loss.is_finite() || loss.abs() > DIVERGENCE_LIMIT
}

/// Run one (plain or grafted) training loop.
pub fn train(
    problem_spec: &ProblemSpec,
    optimizer_spec: &RunOptimizerSpec,
    settings: &RunSettings,
    options: TrainOptions,
) -> Result<RunResult, HarnessError> {
    settings.validate()?;
    let problem = problem_spec.build(derive_seed(settings.seed, &["problem"]))?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(settings.seed, &["init"]));
    let w0 = problem.initial_params(&mut init_rng);
    train_from(problem.as_ref(), w0, optimizer_spec, settings, options)
}

/// Training loop with an explicit starting point (used by tests and the
/// closed-loop pipelines).
pub fn train_from(
    problem: &dyn Problem,
    mut w: ModelParams,
    optimizer_spec: &RunOptimizerSpec,
    settings: &RunSettings,
    options: TrainOptions,
) -> Result<RunResult, HarnessError> {
    settings.validate()?;
    let mut data_rng = ChaCha8Rng::seed_from_u64(derive_seed(settings.seed, &["data"]));
    let sampling = settings
        .sampling
        .unwrap_or_else(|| problem.default_sampling());
    let mut runner = Runner::build(optimizer_spec, &w, options.with_telemetry)?;

    let mut curve = TrainingCurve::default();
    curve.points.push(CurvePoint {
        step: 0,
        train_loss: problem.train_loss(&w),
        test_metric: problem.test_error(&w),
        lr_effective: 0.0,
    });
    let mut trajectory = options.capture_trajectory.then(|| vec![w.clone()]);

    let mut steps_run = 0;
    for t in 1..=settings.steps {
        let batch = batch_indices(
            sampling,
            t,
            settings.batch_size,
            problem.train_size(),
            problem,
            &mut data_rng,
        );
        let step_outcome = batch_loss_grad(problem, &w, &batch).and_then(|(loss, g)| {
            if losses_diverged(loss) {
                return Err(HarnessError::Diverged);
            }
            let step = runner.propose(&w, &g)?;
            Ok(axpy(&w, &step, 1.0)?)
        });
        match step_outcome {
            Ok(next) => w = next,
            Err(e) if is_divergence(&e) => {
                curve.diverged = true;
                break;
            }
            Err(e) => return Err(e),
        }
        steps_run = t;
        if let Some(tr) = &mut trajectory {
            tr.push(w.clone());
        }
        if t.is_multiple_of(settings.eval_every) {
            let train_loss = problem.train_loss(&w);
            let test_metric = problem.test_error(&w);
            if losses_diverged(train_loss) {
                curve.diverged = true;
                break;
            }
            curve.points.push(CurvePoint {
                step: t,
                train_loss,
                test_metric,
                lr_effective: runner.last_effective_scale(),
            });
        }
    }

    Ok(RunResult {
        curve,
        final_params: w,
        steps_run,
        telemetry: runner.take_telemetry(),
        trajectory,
    })
}

/// Sweep the `epsilon` stability constant, everything else (including the
/// seed) held fixed. The base spec must precondition, otherwise epsilon is
/// inert and the sweep meaningless.
pub fn epsilon_sweep(
    problem_spec: &ProblemSpec,
    base: &OptimizerSpec,
    eps_values: &[f64],
    settings: &RunSettings,
) -> Result<Vec<(f64, RunResult)>, HarnessError> {
    let base_cfg = base.build_config()?;
    if !base_cfg.precondition {
        return Err(HarnessError::InvalidConfig(
            "epsilon sweep requires a preconditioned base optimizer".into(),
        ));
    }
    eps_values
        .iter()
        .map(|&eps| {
            let spec = base.clone().with_epsilon(eps);
            let result = train(
                problem_spec,
                &RunOptimizerSpec::Plain(spec),
                settings,
                TrainOptions::default(),
            )?;
            Ok((eps, result))
        })
        .collect()
}
