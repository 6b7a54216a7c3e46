//! All-pairs grafting grid: rows supply the magnitude, columns the direction,
//! diagonal cells run the optimizer ungrafted.

use std::fmt::Write as _;

use crate::graft::GraftScope;
use crate::parallel::fan_out;

use super::io::fmt_f64;
use super::{
    derive_seed, HarnessError, OptimizerSpec, ProblemSpec, RunOptimizerSpec, RunResult,
    RunSettings, TrainOptions,
};

#[derive(Clone, Debug)]
pub struct GridSpec {
    pub optimizers: Vec<OptimizerSpec>,
    pub scope: GraftScope,
    pub eps_graft: f64,
}

#[derive(Clone, Debug)]
pub struct GridCell {
    pub m: String,
    pub d: String,
    pub result: RunResult,
}

/// Run every (magnitude, direction) pair. Cells are independent: each derives
/// its own seed from the master seed and the pair of labels, and they fan out
/// across `jobs` workers. A diverged cell is recorded in place, not fatal.
pub fn grid(
    problem: &ProblemSpec,
    spec: &GridSpec,
    settings: &RunSettings,
    jobs: usize,
) -> Result<Vec<GridCell>, HarnessError> {
    if spec.optimizers.is_empty() {
        return Err(HarnessError::InvalidConfig(
            "grid needs at least one optimizer".into(),
        ));
    }
    let labels: Vec<String> = spec
        .optimizers
        .iter()
        .map(|o| o.effective_label())
        .collect();
    for (i, l) in labels.iter().enumerate() {
        if labels[..i].contains(l) {
            return Err(HarnessError::InvalidConfig(format!(
                "duplicate optimizer label {l:?} in grid"
            )));
        }
    }
    // validate configs up front so bad specs fail the whole grid, not a cell
    for o in &spec.optimizers {
        o.build_config()?;
    }

    let mut cells = Vec::with_capacity(spec.optimizers.len().pow(2));
    for (i, m) in spec.optimizers.iter().enumerate() {
        for (j, d) in spec.optimizers.iter().enumerate() {
            let run_spec = if i == j {
                // grafting (A, A) is just running A
                RunOptimizerSpec::Plain(m.clone())
            } else {
                RunOptimizerSpec::Grafted {
                    m: m.clone(),
                    d: d.clone(),
                    scope: spec.scope,
                    eps_graft: spec.eps_graft,
                }
            };
            let cell_settings = settings.clone().with_seed(derive_seed(
                settings.seed,
                &["cell", &labels[i], &labels[j]],
            ));
            cells.push((
                labels[i].clone(),
                labels[j].clone(),
                run_spec,
                cell_settings,
            ));
        }
    }

    let problem = problem.clone();
    let results =
        fan_out(cells, jobs, move |(m, d, run_spec, cell_settings)| {
            train(&problem, &run_spec, &cell_settings, TrainOptions::default())
                .map(|result| GridCell { m, d, result })
        });
    results.into_iter().collect()
}

use super::train;

/// Summary CSV: `m,d,final_train_loss,final_test_metric,steps`.
pub fn grid_summary_csv(cells: &[GridCell]) -> String {
    let mut out = String::from("m,d,final_train_loss,final_test_metric,steps\n");
    for c in cells {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            c.m,
            c.d,
            fmt_f64(c.result.final_train_loss()),
            fmt_f64(c.result.final_test_metric()),
            c.result.steps_run
        );
    }
    out
}
