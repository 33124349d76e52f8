//! Scenario runner: reads a TOML scenario, dispatches to the numerics and
//! writes a self-contained run directory with CSVs and a JSON report.

pub mod config;
pub mod error;
pub mod report;
pub mod runners;

use std::path::{Path, PathBuf};

pub use config::{Kind, ScenarioConfig, SCHEMA_VERSION};
pub use error::CliError;
pub use report::{Check, RunReport};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_THRESHOLD: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Run directory; created if missing.
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub threads: usize,
}

/// Reads, parses and validates a scenario, applying a seed override first.
pub fn load(path: &Path, seed: Option<u64>) -> Result<(String, ScenarioConfig), CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut cfg = ScenarioConfig::parse(&text)?;
    if seed.is_some() {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok((text, cfg))
}

pub fn validate_file(path: &Path, seed: Option<u64>) -> Result<ScenarioConfig, CliError> {
    load(path, seed).map(|(_, cfg)| cfg)
}

/// Runs a scenario file into `opts.out` and returns its report.
pub fn run_file(path: &Path, opts: &RunOptions) -> Result<RunReport, CliError> {
    let (text, cfg) = load(path, opts.seed)?;
    run_config(&text, &cfg, opts)
}

pub fn run_config(text: &str, cfg: &ScenarioConfig, opts: &RunOptions) -> Result<RunReport, CliError> {
    let outcome = runners::run_kind(cfg.kind, cfg, opts.threads)?;
    let dir = &opts.out;
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;

    let mut echo = text.to_string();
    if !echo.ends_with('\n') {
        echo.push('\n');
    }
    if let Some(s) = opts.seed {
        echo.push_str(&format!("# seed overridden on the command line: {s}\n"));
    }
    let mut outputs = Vec::new();
    let mut write = |name: &str, role: &str, content: &str| -> Result<(), CliError> {
        report::write_file(&dir.join(name), content)?;
        outputs.push(report::OutputEntry { path: name.into(), role: role.into(), sha256: report::sha256_hex(content.as_bytes()) });
        Ok(())
    };
    write("config.toml", "config echo", &echo)?;
    for (name, role, table) in &outcome.tables {
        write(name, role, &table.to_csv())?;
    }
    let passed = outcome.checks.iter().all(|c| c.passed);
    let rep = RunReport {
        name: cfg.label(),
        kind: cfg.kind.name().into(),
        seed: cfg.seed,
        config_hash: report::blob_hash(&echo),
        config_echo: "config.toml".into(),
        outputs,
        metrics: outcome.metrics,
        checks: outcome.checks,
        passed,
    };
    let json = serde_json::to_string_pretty(&rep).expect("report serializes");
    report::write_file(&dir.join("report.json"), &(json + "\n"))?;
    Ok(rep)
}
