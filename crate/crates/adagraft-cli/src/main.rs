//! `adagraft` — grafting experiments from one JSON config.
//!
//! Exit codes: 0 success, 2 unusable config or environment, 3 run-level
//! failure (divergence, failed fit).

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use adagraft::harness::{
    correction_pipeline, curve_to_csv_string, grid, grid_summary_csv, pathological_suite,
    regret_outcomes_csv, regret_suite, train, GridSpec, HingeSuiteConfig, RegretConfig,
    RunOptimizerSpec, RunResult, TrainOptions, WilsonSuiteConfig,
};
use adagraft::telemetry::FitWindow;

use config::{parse_config, CliConfig};

#[derive(Parser)]
#[command(
    name = "adagraft",
    version,
    about = "Learning-rate grafting experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One training run (plain optimizer or grafted pair); writes curve.csv.
    Run(CommonArgs),
    /// All-pairs grafting grid; writes one CSV per cell plus summary.csv.
    Grid(CommonArgs),
    /// Correction discovery: graft, fit, re-run corrected; writes three
    /// curves, the step-norm series, and the fitted correction.
    Correct(CommonArgs),
    /// Hinge and regression constructions over seeds; writes report.json.
    Pathological(CommonArgs),
    /// Regret of diagonal pseudoinverse AdaGrad on linear-loss sequences.
    Regret(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Path to the JSON config.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker count for grid cells and suites (0 = all cores).
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

enum CliError {
    /// Unusable config or environment.
    Config(String),
    /// The run itself failed (divergence, failed fit).
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Runtime(m) => m,
        }
    }
}

fn config_err(e: impl ToString) -> CliError {
    CliError::Config(e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Grid(args) => cmd_grid(args),
        Command::Correct(args) => cmd_correct(args),
        Command::Pathological(args) => cmd_pathological(args),
        Command::Regret(args) => cmd_regret(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

// ---------------------------------------------------------------------------
// shared plumbing
// ---------------------------------------------------------------------------

fn load_config(args: &CommonArgs) -> Result<CliConfig, CliError> {
    let data = std::fs::read_to_string(&args.config)
        .map_err(|e| config_err(format!("cannot read {}: {e}", args.config.display())))?;
    let mut cfg = parse_config(&data).map_err(CliError::Config)?;
    if let Some(seed) = args.seed {
        if let Some(run) = &mut cfg.run {
            run.seed = seed;
        }
    }
    if let Some(out) = &args.out {
        cfg.output = Some(config::OutputSection { dir: out.clone() });
    }
    Ok(cfg)
}

fn out_dir(cfg: &CliConfig) -> Result<PathBuf, CliError> {
    let dir = cfg
        .output
        .as_ref()
        .ok_or_else(|| config_err("config needs an \"output\" section"))?
        .dir
        .clone();
    std::fs::create_dir_all(&dir)
        .map_err(|e| config_err(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

fn write_file(dir: &Path, name: &str, data: &str) -> Result<(), CliError> {
    std::fs::write(dir.join(name), data)
        .map_err(|e| config_err(format!("cannot write {name}: {e}")))
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: Option<u64>,
    diverged: bool,
    outputs: Vec<String>,
    config: &'a CliConfig,
}

fn write_manifest(
    dir: &Path,
    command: &str,
    cfg: &CliConfig,
    diverged: bool,
    outputs: &[String],
) -> Result<(), CliError> {
    let manifest = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.run.as_ref().map(|r| r.seed),
        diverged,
        outputs: outputs.to_vec(),
        config: cfg,
    };
    let mut body = serde_json::to_string_pretty(&manifest).map_err(config_err)?;
    body.push('\n');
    write_file(dir, "manifest.json", &body)
}

fn require_run(cfg: &CliConfig) -> Result<&adagraft::harness::RunSettings, CliError> {
    cfg.run
        .as_ref()
        .ok_or_else(|| config_err("config needs a \"run\" section"))
}

fn require_problem(cfg: &CliConfig) -> Result<&adagraft::harness::ProblemSpec, CliError> {
    cfg.problem
        .as_ref()
        .ok_or_else(|| config_err("config needs a \"problem\" section"))
}

fn write_run_csv(dir: &Path, name: &str, result: &RunResult) -> Result<(), CliError> {
    write_file(dir, name, &curve_to_csv_string(&result.curve))
}

// ---------------------------------------------------------------------------
// commands
// ---------------------------------------------------------------------------

fn cmd_run(args: &CommonArgs) -> Result<(), CliError> {
    let cfg = load_config(args)?;
    let settings = require_run(&cfg)?;
    let problem = require_problem(&cfg)?;
    let optimizer = match (&cfg.optimizer, &cfg.graft) {
        (Some(single), None) => RunOptimizerSpec::Plain(single.clone()),
        (None, Some(graft)) => {
            let (m, d) = match (&graft.m, &graft.d) {
                (Some(m), Some(d)) => (m.clone(), d.clone()),
                _ => return Err(config_err("graft section needs both \"m\" and \"d\"")),
            };
            RunOptimizerSpec::Grafted {
                m,
                d,
                scope: graft.scope,
                eps_graft: graft.eps_graft,
            }
        }
        (Some(_), Some(_)) => {
            return Err(config_err(
                "config has both \"optimizer\" and \"graft\"; pick one",
            ))
        }
        (None, None) => {
            return Err(config_err(
                "config needs an \"optimizer\" or a \"graft\" section",
            ))
        }
    };

    let result =
        train(problem, &optimizer, settings, TrainOptions::default()).map_err(config_err)?;
    let dir = out_dir(&cfg)?;
    write_run_csv(&dir, "curve.csv", &result)?;
    // instance dump (design data, labels) for inspection
    let instance = problem
        .build(adagraft::harness::derive_seed(settings.seed, &["problem"]))
        .map_err(config_err)?;
    let mut design = serde_json::to_string_pretty(&instance.design_json()).map_err(config_err)?;
    design.push('\n');
    write_file(&dir, "problem.json", &design)?;
    write_manifest(
        &dir,
        "run",
        &cfg,
        result.curve.diverged,
        &["curve.csv".into(), "problem.json".into()],
    )?;
    if result.curve.diverged {
        return Err(CliError::Runtime("run diverged; curve truncated".into()));
    }
    Ok(())
}

fn cmd_grid(args: &CommonArgs) -> Result<(), CliError> {
    let cfg = load_config(args)?;
    let settings = require_run(&cfg)?;
    let problem = require_problem(&cfg)?;
    let optimizers = cfg
        .optimizers
        .clone()
        .ok_or_else(|| config_err("grid config needs an \"optimizers\" list"))?;
    if cfg.optimizer.is_some() {
        return Err(config_err("grid uses \"optimizers\", not \"optimizer\""));
    }
    let (scope, eps_graft) = match &cfg.graft {
        Some(g) if g.m.is_some() || g.d.is_some() => {
            return Err(config_err(
                "grid derives pairs from \"optimizers\"; drop graft.m / graft.d",
            ))
        }
        Some(g) => (g.scope, g.eps_graft),
        None => (adagraft::graft::GraftScope::LayerWise, 0.0),
    };

    let spec = GridSpec {
        optimizers,
        scope,
        eps_graft,
    };
    let cells = grid(problem, &spec, settings, args.jobs).map_err(config_err)?;
    let dir = out_dir(&cfg)?;
    let mut outputs = Vec::new();
    for cell in &cells {
        let name = format!("{}__{}.csv", cell.m, cell.d);
        write_run_csv(&dir, &name, &cell.result)?;
        outputs.push(name);
    }
    write_file(&dir, "summary.csv", &grid_summary_csv(&cells))?;
    outputs.push("summary.csv".into());
    let any_diverged = cells.iter().any(|c| c.result.curve.diverged);
    write_manifest(&dir, "grid", &cfg, any_diverged, &outputs)?;
    Ok(())
}

fn cmd_correct(args: &CommonArgs) -> Result<(), CliError> {
    let cfg = load_config(args)?;
    let settings = require_run(&cfg)?;
    let problem = require_problem(&cfg)?;
    let graft = cfg
        .graft
        .as_ref()
        .ok_or_else(|| config_err("correct config needs a \"graft\" section with m and d"))?;
    let (m, d) = match (&graft.m, &graft.d) {
        (Some(m), Some(d)) => (m, d),
        _ => return Err(config_err("graft section needs both \"m\" and \"d\"")),
    };
    let fit = cfg
        .fit
        .as_ref()
        .ok_or_else(|| config_err("correct config needs a \"fit\" section"))?;
    let window = (fit.min_t.is_some() || fit.max_t.is_some()).then_some(FitWindow {
        min_t: fit.min_t,
        max_t: fit.max_t,
    });

    let outcome = correction_pipeline(
        problem,
        m,
        d,
        fit.kind,
        window,
        settings,
        TrainOptions::default(),
    )
    .map_err(config_err)?;

    let dir = out_dir(&cfg)?;
    let mut outputs = vec![
        "grafted.csv".to_string(),
        "direction_plain.csv".to_string(),
        "step_norms.csv".to_string(),
        "correction.json".to_string(),
    ];
    write_run_csv(&dir, "grafted.csv", &outcome.grafted)?;
    write_run_csv(&dir, "direction_plain.csv", &outcome.direction_plain)?;
    let series = outcome
        .grafted
        .telemetry
        .as_ref()
        .expect("grafted run records telemetry");
    write_file(&dir, "step_norms.csv", &series.to_csv_string())?;
    let mut fit_json = match (&outcome.fit, &outcome.fit_error) {
        (Some(fit), _) => serde_json::to_string_pretty(fit).map_err(config_err)?,
        (None, err) => serde_json::to_string_pretty(&serde_json::json!({ "error": err }))
            .map_err(config_err)?,
    };
    fit_json.push('\n');
    write_file(&dir, "correction.json", &fit_json)?;
    if let Some(corrected) = &outcome.direction_corrected {
        write_run_csv(&dir, "direction_corrected.csv", corrected)?;
        outputs.push("direction_corrected.csv".into());
    }

    let diverged = outcome.grafted.curve.diverged
        || outcome.direction_plain.curve.diverged
        || outcome
            .direction_corrected
            .as_ref()
            .is_some_and(|r| r.curve.diverged);
    write_manifest(&dir, "correct", &cfg, diverged, &outputs)?;
    if let Some(err) = &outcome.fit_error {
        return Err(CliError::Runtime(format!("correction fit failed: {err}")));
    }
    if diverged {
        return Err(CliError::Runtime("a run diverged; curves truncated".into()));
    }
    Ok(())
}

fn cmd_pathological(args: &CommonArgs) -> Result<(), CliError> {
    let cfg = load_config(args)?;
    let section = cfg
        .pathological
        .as_ref()
        .ok_or_else(|| config_err("config needs a \"pathological\" section"))?;
    if section.seeds.is_empty() {
        return Err(config_err("pathological.seeds must not be empty"));
    }
    let hinge = section
        .hinge
        .clone()
        .unwrap_or_else(HingeSuiteConfig::default);
    let wilson = section
        .wilson
        .clone()
        .unwrap_or_else(WilsonSuiteConfig::default);

    let outcome =
        pathological_suite(&section.seeds, &hinge, &wilson, args.jobs).map_err(config_err)?;
    let dir = out_dir(&cfg)?;
    let mut outputs = vec!["report.json".to_string()];
    for run in &outcome.runs {
        let name = format!("{}.csv", run.name);
        write_run_csv(&dir, &name, &run.result)?;
        outputs.push(name);
    }
    let mut report = serde_json::to_string_pretty(&outcome.report).map_err(config_err)?;
    report.push('\n');
    write_file(&dir, "report.json", &report)?;
    let any_diverged = outcome.runs.iter().any(|r| r.result.curve.diverged);
    write_manifest(&dir, "pathological", &cfg, any_diverged, &outputs)?;
    if any_diverged {
        return Err(CliError::Runtime("a run diverged; curves truncated".into()));
    }
    Ok(())
}

fn cmd_regret(args: &CommonArgs) -> Result<(), CliError> {
    let cfg = load_config(args)?;
    let settings = require_run(&cfg)?;
    let regret_cfg = cfg.regret.clone().unwrap_or_else(RegretConfig::default);
    let outcomes = regret_suite(&regret_cfg, settings.seed, args.jobs).map_err(config_err)?;
    let dir = out_dir(&cfg)?;
    write_file(&dir, "regret.csv", &regret_outcomes_csv(&outcomes))?;
    let mut report = serde_json::to_string_pretty(&outcomes).map_err(config_err)?;
    report.push('\n');
    write_file(&dir, "report.json", &report)?;
    write_manifest(
        &dir,
        "regret",
        &cfg,
        false,
        &["regret.csv".into(), "report.json".into()],
    )?;
    Ok(())
}
