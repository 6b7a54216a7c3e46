//! Learning-rate grafting over a unified family of second-moment adaptive
//! optimizers, with the diagnostic pipelines built on top: schedule-correction
//! discovery, pseudoinverse-AdaGrad regret checks, and synthetic
//! generalization problems.

pub mod core;
pub mod graft;
pub mod harness;
pub mod optim;
pub mod parallel;
pub mod problems;
pub mod schedules;
pub mod telemetry;
