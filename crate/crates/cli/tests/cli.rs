//! Config validation, exit codes and run-directory layout.

use std::path::{Path, PathBuf};
use std::process::Command;

use fatou_cli::config::ScenarioConfig;
use fatou_cli::{load, run_file, CliError, RunOptions, EXIT_CONFIG, EXIT_PASS, EXIT_THRESHOLD};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).expect("write config");
    p
}

const SOLVE_ONE: &str = r#"
schema_version = 1
kind = "solve"

[solve]

[[economies]]
name = "pair"
oracle_price = [0.5, 0.5]

[[economies.cells]]
mass = 0.5
endowment = [1.0, 0.0]
preference = { kind = "cobb_douglas", weights = [0.5, 0.5] }

[[economies.cells]]
mass = MASS
endowment = [0.0, 1.0]
preference = { kind = "cobb_douglas", weights = [0.5, 0.5] }
"#;

#[test]
fn every_shipped_config_validates() {
    let mut seen = 0;
    for e in std::fs::read_dir(configs()).expect("configs dir") {
        let p = e.expect("entry").path();
        if p.extension().is_some_and(|x| x == "toml") {
            load(&p, None).unwrap_or_else(|err| panic!("{}: {err}", p.display()));
            seen += 1;
        }
    }
    assert!(seen >= 9, "found {seen} configs");
}

#[test]
fn randomized_kind_without_seed_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "c.toml", "schema_version = 1\nkind = \"lyapunov_sweep\"\n[lyapunov_sweep]\n");
    let err = load(&p, None).unwrap_err();
    assert!(matches!(err, CliError::MissingSeed("lyapunov_sweep")), "{err}");
    assert_eq!(err.exit_code(), EXIT_CONFIG);
    // A command-line seed fills the gap.
    let cfg = load(&p, Some(7)).unwrap().1;
    assert_eq!(cfg.seed, Some(7));
}

#[test]
fn negative_mass_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "c.toml", &SOLVE_ONE.replace("MASS", "-0.5"));
    let err = load(&p, None).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("economies[0].cells[1].mass"), "{msg}");
    assert!(msg.contains("positive"), "{msg}");
    assert_eq!(err.exit_code(), EXIT_CONFIG);
    let p = write(dir.path(), "ok.toml", &SOLVE_ONE.replace("MASS", "0.5"));
    assert!(load(&p, None).is_ok());
}

#[test]
fn pipeline_mass_errors_are_named() {
    let text = std::fs::read_to_string(configs().join("we2_accept.toml")).unwrap();
    let text = text.replace("agents = { cells = 2, total_mass = 1.0 }", "agents = { masses = [0.5, -0.5] }");
    let err = ScenarioConfig::parse(&text).and_then(|c| c.validate()).unwrap_err();
    assert!(err.to_string().contains("we2.agents.masses[1]"), "{err}");
}

#[test]
fn parse_errors_carry_a_location() {
    let err = ScenarioConfig::parse("schema_version = 1\nkind = \"solve\"\nseed = \n").unwrap_err();
    assert!(matches!(err, CliError::Parse(_)));
    assert!(err.to_string().contains("line 3"), "{err}");
    let err = ScenarioConfig::parse("schema_version = 1\nkind = \"solve\"\nbogus = 3\n").unwrap_err();
    assert!(err.to_string().contains("bogus"), "{err}");
    let err = ScenarioConfig::parse("schema_version = 1\nkind = \"nope\"\n").unwrap_err();
    assert_eq!(err.exit_code(), EXIT_CONFIG);
}

#[test]
fn wrong_schema_version_is_rejected() {
    let err = ScenarioConfig::parse("schema_version = 2\nkind = \"solve\"\n").and_then(|c| c.validate()).unwrap_err();
    assert!(err.to_string().contains("schema_version"), "{err}");
}

#[test]
fn run_directory_is_self_describing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let rep = run_file(&configs().join("solve_oracles.toml"), &RunOptions { out: out.clone(), seed: None, threads: 2 }).unwrap();
    assert!(rep.passed);
    let echo = std::fs::read_to_string(out.join("config.toml")).unwrap();
    assert_eq!(echo, std::fs::read_to_string(configs().join("solve_oracles.toml")).unwrap());
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(json["kind"], "solve");
    assert_eq!(json["config_hash"].as_str().unwrap().len(), 64);
    for o in json["outputs"].as_array().unwrap() {
        let path = out.join(o["path"].as_str().unwrap());
        assert!(path.exists(), "{}", path.display());
    }
    assert!(json["checks"].as_array().unwrap().iter().all(|c| c["passed"] == true));
}

#[test]
fn seed_override_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let rep = run_file(&configs().join("lyapunov_sweep.toml"), &RunOptions { out: out.clone(), seed: Some(99), threads: 1 }).unwrap();
    assert_eq!(rep.seed, Some(99));
    let echo = std::fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(echo.ends_with("# seed overridden on the command line: 99\n"));
}

#[test]
fn we1_levels_repeat_the_two_good_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let rep = run_file(&configs().join("we1_coordinate.toml"), &RunOptions { out: out.clone(), seed: None, threads: 1 }).unwrap();
    assert!(rep.passed, "{:?}", rep.failing());
    // Masses 1/2, Cobb-Douglas (0.6, 0.4) with w = (2, 1/2) and (0.3, 0.7) with
    // w = (1/2, 2): clearing good 1 gives 0.675 p1 + 0.45 p2 = 1.25 p1.
    let text = std::fs::read_to_string(out.join("prices.csv")).unwrap();
    let p: Vec<f64> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(p.len(), 5);
    assert!((p[1] / p[0] - 0.575 / 0.45).abs() < 1e-9, "{p:?}");
    assert!(((p[0] * p[0] + p[1] * p[1]).sqrt() - 1.0).abs() < 1e-12);
    assert!(p[2..].iter().all(|v| *v == 0.0), "unvalued goods are free: {p:?}");
}

fn fatoulab(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_fatoulab")).args(args).output().expect("spawn fatoulab")
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let good = configs().join("fatou_sweep.toml");
    let out = dir.path().join("a");
    let o = fatoulab(&["run", good.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(EXIT_PASS), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("PASS final_epsilon"));

    let bad = write(dir.path(), "bad.toml", "schema_version = 1\nkind = \"fatou_exact\"\n[fatou_exact]\n");
    let o = fatoulab(&["validate", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(EXIT_CONFIG));
    assert!(String::from_utf8_lossy(&o.stderr).contains("seed"));

    // An unreachable threshold fails the run but still writes the report.
    let text = std::fs::read_to_string(&good).unwrap().replace("min_final_epsilon = 0.1", "min_final_epsilon = 0.9");
    assert!(text.contains("0.9"), "fatou_sweep.toml must set min_final_epsilon");
    let strict = write(dir.path(), "strict.toml", &text);
    let out = dir.path().join("b");
    let o = fatoulab(&["run", strict.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(EXIT_THRESHOLD));
    assert!(out.join("report.json").exists());

    // An unwritable run directory is a runtime failure.
    let blocker = write(dir.path(), "blocker", "");
    let out = blocker.join("run");
    let o = fatoulab(&["run", good.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(fatou_cli::EXIT_RUNTIME));
}
