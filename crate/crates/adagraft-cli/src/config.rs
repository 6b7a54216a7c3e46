//! Config file model and strict schema validation.
//!
//! Configs are one JSON document with optional sections; each subcommand
//! checks that the sections it needs are present. Documents are validated
//! against the schema below before deserialization, and unknown keys anywhere
//! are rejected. The full schema is documented in the README.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use adagraft::graft::GraftScope;
use adagraft::harness::{
    HingeSuiteConfig, OptimizerSpec, ProblemSpec, RegretConfig, RunSettings, WilsonSuiteConfig,
};
use adagraft::telemetry::FitKind;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem: Option<ProblemSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizers: Option<Vec<OptimizerSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graft: Option<GraftSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pathological: Option<PathologicalSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regret: Option<RegretConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<RunSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputSection>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraftSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<OptimizerSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<OptimizerSpec>,
    #[serde(default = "default_scope")]
    pub scope: GraftScope,
    #[serde(default)]
    pub eps_graft: f64,
}

fn default_scope() -> GraftScope {
    GraftScope::LayerWise
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    pub kind: FitKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_t: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_t: Option<u64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathologicalSection {
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hinge: Option<HingeSuiteConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wilson: Option<WilsonSuiteConfig>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

// ---------------------------------------------------------------------------
// schema walk: reject unknown keys everywhere before typed deserialization
// ---------------------------------------------------------------------------

fn object<'a>(v: &'a Value, path: &str) -> Result<&'a serde_json::Map<String, Value>, String> {
    v.as_object()
        .ok_or_else(|| format!("{path}: expected an object"))
}

fn known_keys(
    obj: &serde_json::Map<String, Value>,
    allowed: &[&str],
    path: &str,
) -> Result<(), String> {
    for key in obj.keys() {
        if !allowed.contains(&key.as_str()) {
            return Err(format!("{path}: unknown key {key:?}"));
        }
    }
    Ok(())
}

fn kind_of<'a>(obj: &'a serde_json::Map<String, Value>, path: &str) -> Result<&'a str, String> {
    obj.get("kind")
        .and_then(Value::as_str)
        .ok_or_else(|| format!("{path}: missing string field \"kind\""))
}

fn validate_schedule(v: &Value, path: &str) -> Result<(), String> {
    let obj = object(v, path)?;
    let allowed: &[&str] = match kind_of(obj, path)? {
        "constant" | "inverse_time" | "inverse_sqrt" => &["kind", "c"],
        "exp_decay" | "exp_grow" => &["kind", "c", "gamma"],
        "cosine" | "linear" => &["kind", "c0", "c1"],
        "warmup_staircase" => &["kind", "peak", "warmup_steps", "drop_steps", "drop_factor"],
        "power" => &["kind", "c", "alpha"],
        "product" => {
            known_keys(obj, &["kind", "factors"], path)?;
            let factors = obj
                .get("factors")
                .and_then(Value::as_array)
                .ok_or_else(|| format!("{path}.factors: expected an array"))?;
            for (i, f) in factors.iter().enumerate() {
                validate_schedule(f, &format!("{path}.factors[{i}]"))?;
            }
            return Ok(());
        }
        other => return Err(format!("{path}: unknown schedule kind {other:?}")),
    };
    known_keys(obj, allowed, path)
}

fn validate_optimizer(v: &Value, path: &str) -> Result<(), String> {
    let obj = object(v, path)?;
    known_keys(
        obj,
        &[
            "preset",
            "lr",
            "label",
            "beta1",
            "beta2",
            "epsilon",
            "precondition",
            "bias_correct",
        ],
        path,
    )?;
    match obj.get("lr") {
        Some(lr) => validate_schedule(lr, &format!("{path}.lr")),
        None => Err(format!("{path}: missing \"lr\" schedule")),
    }
}

fn validate_problem(v: &Value, path: &str) -> Result<(), String> {
    let obj = object(v, path)?;
    match kind_of(obj, path)? {
        "quadratic" => {
            known_keys(obj, &["kind", "dim", "groups"], path)?;
            if let Some(groups) = obj.get("groups") {
                let arr = groups
                    .as_array()
                    .ok_or_else(|| format!("{path}.groups: expected an array"))?;
                for (i, g) in arr.iter().enumerate() {
                    let gp = format!("{path}.groups[{i}]");
                    known_keys(object(g, &gp)?, &["name", "dim", "curvature"], &gp)?;
                }
            }
            Ok(())
        }
        "sparse_hinge" => known_keys(obj, &["kind", "d", "fill"], path),
        "wilson_regression" => known_keys(obj, &["kind", "n", "d", "p"], path),
        other => Err(format!("{path}: unknown problem kind {other:?}")),
    }
}

fn validate_run(v: &Value, path: &str) -> Result<(), String> {
    known_keys(
        object(v, path)?,
        &["steps", "seed", "eval_every", "batch_size", "sampling"],
        path,
    )
}

fn validate_graft(v: &Value, path: &str) -> Result<(), String> {
    let obj = object(v, path)?;
    known_keys(obj, &["m", "d", "scope", "eps_graft"], path)?;
    if let Some(m) = obj.get("m") {
        validate_optimizer(m, &format!("{path}.m"))?;
    }
    if let Some(d) = obj.get("d") {
        validate_optimizer(d, &format!("{path}.d"))?;
    }
    Ok(())
}

fn validate_pathological(v: &Value, path: &str) -> Result<(), String> {
    let obj = object(v, path)?;
    known_keys(obj, &["seeds", "hinge", "wilson"], path)?;
    if let Some(h) = obj.get("hinge") {
        let hp = format!("{path}.hinge");
        known_keys(
            object(h, &hp)?,
            &["d", "fill", "adagrad_lr", "sgd_eta0_grid"],
            &hp,
        )?;
    }
    if let Some(w) = obj.get("wilson") {
        let wp = format!("{path}.wilson");
        known_keys(
            object(w, &wp)?,
            &[
                "n",
                "d",
                "p",
                "adagrad_lr",
                "adagrad_steps",
                "sgd_lr",
                "sgd_steps",
            ],
            &wp,
        )?;
    }
    Ok(())
}

fn validate_regret(v: &Value, path: &str) -> Result<(), String> {
    known_keys(
        object(v, path)?,
        &[
            "dim",
            "rounds",
            "random_sequences",
            "adversarial_sequences",
            "eta",
            "box_bound",
            "silent_coords",
        ],
        path,
    )
}

/// Reject unknown keys anywhere in the document.
pub fn validate_document(doc: &Value) -> Result<(), String> {
    let obj = object(doc, "config")?;
    known_keys(
        obj,
        &[
            "problem",
            "optimizer",
            "optimizers",
            "graft",
            "fit",
            "pathological",
            "regret",
            "run",
            "output",
        ],
        "config",
    )?;
    if let Some(p) = obj.get("problem") {
        validate_problem(p, "problem")?;
    }
    if let Some(o) = obj.get("optimizer") {
        validate_optimizer(o, "optimizer")?;
    }
    if let Some(os) = obj.get("optimizers") {
        let arr = os
            .as_array()
            .ok_or_else(|| "optimizers: expected an array".to_string())?;
        for (i, o) in arr.iter().enumerate() {
            validate_optimizer(o, &format!("optimizers[{i}]"))?;
        }
    }
    if let Some(g) = obj.get("graft") {
        validate_graft(g, "graft")?;
    }
    if let Some(f) = obj.get("fit") {
        known_keys(object(f, "fit")?, &["kind", "min_t", "max_t"], "fit")?;
    }
    if let Some(p) = obj.get("pathological") {
        validate_pathological(p, "pathological")?;
    }
    if let Some(r) = obj.get("regret") {
        validate_regret(r, "regret")?;
    }
    if let Some(r) = obj.get("run") {
        validate_run(r, "run")?;
    }
    if let Some(o) = obj.get("output") {
        known_keys(object(o, "output")?, &["dir"], "output")?;
    }
    Ok(())
}

/// Parse and validate a config document.
pub fn parse_config(data: &str) -> Result<CliConfig, String> {
    let doc: Value =
        serde_json::from_str(data).map_err(|e| format!("config is not valid JSON: {e}"))?;
    validate_document(&doc)?;
    serde_json::from_value(doc).map_err(|e| format!("config has invalid field types: {e}"))
}
