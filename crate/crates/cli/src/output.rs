//! Artifacts on disk: `result.json`, CSV tables and `manifest.json`.

use std::fs;
use std::path::Path;

use serde_json::{json, Map, Value};

use crate::config::{Plan, MANIFEST_SCHEMA};
use crate::tasks::Artifacts;
use crate::CliError;

pub const RESULT_SCHEMA: &str = "openham-result/1.0";

pub struct RunInfo<'a> {
    pub config_path: Option<&'a Path>,
    pub started_unix: f64,
    pub wall_seconds: f64,
}

fn write(dir: &Path, name: &str, body: &str) -> Result<(), CliError> {
    fs::write(dir.join(name), body)
        .map_err(|e| CliError::Output(format!("{}: {e}", dir.join(name).display())))
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("JSON value serializes");
    s.push('\n');
    s
}

fn manifest(plan: &Plan, info: &RunInfo, status: &str, outputs: &[String]) -> Value {
    json!({
        "schema": MANIFEST_SCHEMA,
        "tool": "openham",
        "version": env!("CARGO_PKG_VERSION"),
        "library_version": openham::VERSION,
        "task": plan.task.name(),
        "status": status,
        "seed": plan.config.seed,
        "workers": plan.workers,
        "engines": plan.engines,
        "config_path": info.config_path.map(|p| p.display().to_string()),
        "started_unix": info.started_unix,
        "wall_time_seconds": info.wall_seconds,
        "outputs": outputs,
        "config": plan.config,
    })
}

/// Writes a successful (or validation-failed) run.
pub fn write_run(plan: &Plan, art: &Artifacts, info: &RunInfo) -> Result<Vec<String>, CliError> {
    let dir = &plan.out;
    fs::create_dir_all(dir).map_err(|e| CliError::Output(format!("{}: {e}", dir.display())))?;
    let mut result = Map::new();
    result.insert("schema".into(), json!(RESULT_SCHEMA));
    result.insert("task".into(), json!(plan.task.name()));
    result.insert(
        "status".into(),
        json!(if art.passed { "ok" } else { "failed" }),
    );
    result.insert("seed".into(), json!(plan.config.seed));
    result.extend(art.payload.clone());
    write(dir, "result.json", &pretty(&Value::Object(result)))?;
    let mut outputs = vec!["result.json".to_string()];
    for (name, body) in &art.csv {
        write(dir, name, body)?;
        outputs.push(name.clone());
    }
    outputs.push("manifest.json".into());
    let status = if art.passed { "ok" } else { "failed" };
    write(
        dir,
        "manifest.json",
        &pretty(&manifest(plan, info, status, &outputs)),
    )?;
    Ok(outputs)
}

/// Machine-readable error record.
pub fn error_record(err: &CliError) -> Value {
    json!({
        "error": {
            "kind": err.kind(),
            "operation": err.operation(),
            "message": err.to_string(),
            "exit_code": err.exit_code(),
        }
    })
}

/// Writes `error.json` and the manifest of a run that failed while
/// computing. Config errors never reach this point.
pub fn write_failure(plan: &Plan, err: &CliError, info: &RunInfo) -> Result<(), CliError> {
    let dir = &plan.out;
    fs::create_dir_all(dir).map_err(|e| CliError::Output(format!("{}: {e}", dir.display())))?;
    write(dir, "error.json", &pretty(&error_record(err)))?;
    let outputs = vec!["error.json".to_string(), "manifest.json".to_string()];
    write(
        dir,
        "manifest.json",
        &pretty(&manifest(plan, info, "error", &outputs)),
    )
}
