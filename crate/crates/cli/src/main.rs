//! Command-line front end: runs one JSON-configured pipeline per process.
//!
//! Usage: `enstrack <config.json>`. The config's `command` field selects
//! the pipeline; artifacts land in the configured `out_dir` and a JSON
//! summary goes to standard output. Exit codes: 0 on success, 2 on a
//! configuration or validation error, 3 on a numerical or solver error.

mod commands;
mod config;
mod output;

use std::fmt::Display;
use std::path::Path;
use std::process::ExitCode;

/// Error carrying its exit category: configuration trouble (2) versus
/// numerical or solver failure (3).
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical(String),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn numerical(err: impl Display) -> Self {
        CliError::Numerical(err.to_string())
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Numerical(_) => "numerical",
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Numerical(m) => m,
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

fn dispatch(raw: &str, base_dir: &Path) -> Result<serde_json::Value, CliError> {
    let mut value: serde_json::Value = serde_json::from_str(raw)
        .map_err(|e| CliError::config(format!("config is not valid JSON: {e}")))?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| CliError::config("config must be a JSON object"))?;
    let command = obj
        .remove("command")
        .and_then(|v| v.as_str().map(str::to_string))
        .ok_or_else(|| CliError::config("config needs a string \"command\" field"))?;
    let rest = serde_json::Value::Object(obj.clone());
    let bad = |e: serde_json::Error| CliError::config(format!("bad {command} config: {e}"));
    match command.as_str() {
        "gramian" => commands::run_gramian(&serde_json::from_value(rest).map_err(bad)?),
        "min-energy" => commands::run_min_energy(&serde_json::from_value(rest).map_err(bad)?),
        "wasserstein" => {
            commands::run_wasserstein(&serde_json::from_value(rest).map_err(bad)?, base_dir)
        }
        "track" => commands::run_track(&serde_json::from_value(rest).map_err(bad)?, base_dir),
        "track-gaussian" => {
            commands::run_track_gaussian(&serde_json::from_value(rest).map_err(bad)?)
        }
        "observability" => {
            commands::run_observability(&serde_json::from_value(rest).map_err(bad)?)
        }
        "ctrl-measure" => {
            commands::run_ctrl_measure(&serde_json::from_value(rest).map_err(bad)?, base_dir)
        }
        other => Err(CliError::config(format!(
            "unknown command \"{other}\" (expected gramian, min-energy, wasserstein, track, \
             track-gaussian, observability or ctrl-measure)"
        ))),
    }
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    if args.len() != 2 || args[1] == "--help" || args[1] == "-h" {
        eprintln!("usage: enstrack <config.json>");
        eprintln!("       see README.md for the config schema per command");
        return ExitCode::from(if args.len() != 2 { 2 } else { 0 });
    }
    let path = Path::new(&args[1]);
    let raw = match std::fs::read_to_string(path) {
        Ok(raw) => raw,
        Err(e) => {
            let err = CliError::config(format!("cannot read {}: {e}", path.display()));
            report(&err);
            return ExitCode::from(err.exit_code());
        }
    };
    let base_dir = path.parent().unwrap_or(Path::new("."));
    match dispatch(&raw, base_dir) {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).unwrap());
            ExitCode::SUCCESS
        }
        Err(err) => {
            report(&err);
            ExitCode::from(err.exit_code())
        }
    }
}

fn report(err: &CliError) {
    let body = serde_json::json!({
        "error": { "kind": err.kind(), "message": err.message() }
    });
    eprintln!("{body}");
}
