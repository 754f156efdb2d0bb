#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub struct CliRun {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl CliRun {
    pub fn json(&self) -> Value {
        serde_json::from_str(&self.stdout).unwrap_or_else(|e| panic!("stdout is not JSON ({e}): {}", self.stdout))
    }
}

pub fn dpsk<I, S>(args: I) -> CliRun
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    let out = Command::new(env!("CARGO_BIN_EXE_dpsk"))
        .args(args)
        .output()
        .expect("binary runs");
    CliRun {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

pub fn read_report(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).expect("report written")).expect("report is JSON")
}

/// Missing or mistyped fields of a mechanism report.
pub fn mechanism_schema_errors(v: &Value) -> Vec<String> {
    let mut errs = Vec::new();
    let mut need = |key: &str, ok: fn(&Value) -> bool| {
        if !v.get(key).is_some_and(ok) {
            errs.push(format!("bad or missing `{key}`"));
        }
    };
    need("command", Value::is_string);
    need("params", Value::is_object);
    need("guard_report", |g| {
        g["required_sigma_min"].is_f64() && g["observed_sigma_min"].is_f64() && g["passed"].is_boolean()
    });
    need("error_vs_oracle", |e| e.is_object() || e.is_null());
    need("space_entries", Value::is_u64);
    need("peak_entries", Value::is_u64);
    need("wall_time_ms", Value::is_f64);
    errs
}

pub fn verify_schema_errors(v: &Value) -> Vec<String> {
    let mut errs = Vec::new();
    if !v["pass"].is_boolean() {
        errs.push("bad or missing `pass`".into());
    }
    match v["checks"].as_array() {
        Some(checks) if !checks.is_empty() => {
            for c in checks {
                let ok = c["check"].is_string()
                    && c["trials"].is_u64()
                    && c["violations"].is_u64()
                    && c["allowed"].is_f64()
                    && c["pass"].is_boolean()
                    && c["seeds"].is_array();
                if !ok {
                    errs.push(format!("malformed check record {c}"));
                }
            }
        }
        _ => errs.push("missing `checks`".into()),
    }
    errs
}

pub fn f(v: &Value) -> f64 {
    v.as_f64().unwrap_or_else(|| panic!("not a number: {v}"))
}
