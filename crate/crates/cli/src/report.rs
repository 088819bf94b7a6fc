//! Run manifest and artifact writing.

use std::fs;
use std::time::Instant;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{RunConfig, AUTO_BETA_FACTOR};
use crate::run::run_experiment;
use crate::CliError;

/// `sha256("blob <len>\0" + content)`, the git object hash under SHA-256.
pub fn content_hash(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Runs the configured experiment, writes every artifact and returns
/// whether all checks passed.
pub fn execute(cfg: &RunConfig) -> Result<bool, CliError> {
    let start = Instant::now();
    let echo = serde_json::to_value(cfg).expect("serializable");
    let canonical = serde_json::to_string(&echo).expect("serializable");
    let outcome = run_experiment(cfg, cfg.seed)?;
    let solve_seconds = start.elapsed().as_secs_f64();

    fs::create_dir_all(&cfg.output).map_err(|e| CliError::Runtime(format!("creating {}: {e}", cfg.output.display())))?;
    let mut artifacts = Vec::new();
    for (name, body) in &outcome.tables {
        fs::write(cfg.output.join(name), body).map_err(CliError::runtime)?;
        artifacts.push(json!({ "file": name, "sha256": content_hash(body.as_bytes()) }));
    }
    let pass = outcome.failures.is_empty();
    let report = json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "config": echo,
        "config_hash": content_hash(canonical.as_bytes()),
        "seed": cfg.seed,
        "beta_rule": {
            "beta": cfg.beta(),
            "threshold": cfg.beta_threshold(),
            "factor": AUTO_BETA_FACTOR,
            "epsilon": cfg.model.epsilon,
        },
        "status": if pass { "pass" } else { "fail" },
        "failures": outcome.failures,
        "results": outcome.results,
        "artifacts": artifacts,
        "timings": { "experiment_seconds": solve_seconds, "total_seconds": start.elapsed().as_secs_f64() },
    });
    let text = serde_json::to_string_pretty(&report).expect("serializable");
    fs::write(cfg.output.join("report.json"), text + "\n").map_err(CliError::runtime)?;
    println!("{}: {}", if pass { "pass" } else { "fail" }, cfg.output.join("report.json").display());
    if let Value::Array(f) = &report["failures"] {
        for msg in f {
            eprintln!("failed: {}", msg.as_str().unwrap_or_default());
        }
    }
    Ok(pass)
}
