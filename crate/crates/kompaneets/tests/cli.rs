//! Integration tests for the command-line front end: binary exit codes,
//! schema rejection, output determinism, and the stepper-injection seam.

use kompaneets::cli::{execute, execute_with_stepper, parse_config, preset, CliError, RunConfig};
use kompaneets::solver::{Profile, SchemeConfig, SolverError, Stepper};
use std::path::Path;
use std::process::Command;

const SMALL_CONFIG: &str = r#"{
    "mesh": {"m": 100, "right": 20.0, "last_spacing": 0.9},
    "scheme": {"dt": 2e-3, "nonlinearity": "explicit", "t_end": 0.1, "record_every": 5},
    "initial": {"family": "planck_multiple", "factor": 1.0},
    "diagnostics": {"snapshot_every": 5}
}"#;

fn small_config() -> RunConfig {
    parse_config(SMALL_CONFIG).unwrap()
}

#[test]
fn identical_configs_produce_byte_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let config = small_config();
    execute(&config, &a).unwrap();
    execute(&config, &b).unwrap();
    for file in [
        "series.csv",
        "profiles.csv",
        "onset.json",
        "fit.json",
        "audits.json",
    ] {
        let left = std::fs::read(a.join(file)).unwrap_or_else(|_| panic!("missing {file}"));
        let right = std::fs::read(b.join(file)).unwrap();
        assert_eq!(left, right, "{file} differs between identical runs");
        assert!(!left.is_empty(), "{file} is empty");
    }
}

#[test]
fn unknown_keys_and_bad_values_are_schema_errors() {
    let unknown = SMALL_CONFIG.replace("\"diagnostics\"", "\"diagnstics\"");
    assert!(matches!(parse_config(&unknown), Err(CliError::Schema(_))));

    let bad_dt = SMALL_CONFIG.replace("2e-3", "\"automatic\"");
    let config = parse_config(&bad_dt).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let err = execute(&config, dir.path()).unwrap_err();
    assert!(matches!(err, CliError::Schema(_)), "got {err:?}");

    assert!(matches!(
        parse_config("{\"mesh\": "),
        Err(CliError::Parse(_))
    ));
}

#[test]
fn presets_all_parse() {
    for name in ["canonical", "slope", "shock", "subplanck", "superplanck"] {
        let text = preset(name).expect("preset exists");
        parse_config(text).unwrap_or_else(|e| panic!("preset {name} rejected: {e}"));
    }
    assert!(preset("nonexistent").is_none());
}

/// A stepper that inflates the profile by 1% per step without touching the
/// boundary outflux, silently destroying mass conservation.
struct InflatingStepper;

impl Stepper<f64> for InflatingStepper {
    fn step(
        &mut self,
        profile: &Profile<f64>,
        cfg: &SchemeConfig<f64>,
    ) -> Result<Profile<f64>, SolverError> {
        let values: Vec<f64> = profile.values().iter().map(|v| v * 1.01).collect();
        Profile::new(profile.mesh().clone(), values, profile.time() + cfg.dt)
    }
}

#[test]
fn broken_stepper_fails_the_loss_audit() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config();
    let report =
        execute_with_stepper(&config, dir.path(), &mut || Box::new(InflatingStepper)).unwrap();
    assert!(
        report
            .failures
            .iter()
            .any(|f| f.contains("loss audit")),
        "expected a loss-audit failure, got {:?}",
        report.failures
    );
}

fn run_binary(args: &[&str], cwd: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_simulate"))
        .args(args)
        .current_dir(cwd)
        .env_remove("KOMPANEETS_OUT")
        .output()
        .expect("binary runs")
}

#[test]
fn binary_exit_codes_reflect_outcome() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("run.json");
    std::fs::write(&config_path, SMALL_CONFIG).unwrap();
    let out = dir.path().join("out");

    let ok = run_binary(
        &[config_path.to_str().unwrap(), "--out", out.to_str().unwrap()],
        dir.path(),
    );
    assert!(
        ok.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&ok.stdout),
        String::from_utf8_lossy(&ok.stderr)
    );
    assert!(out.join("series.csv").exists());
    assert!(out.join("audits.json").exists());

    let missing = run_binary(&["no-such-config.json"], dir.path());
    assert_eq!(missing.status.code(), Some(2));

    let broken_path = dir.path().join("broken.json");
    std::fs::write(&broken_path, "{\"mesh\": {\"m\": 0}}").unwrap();
    let broken = run_binary(&[broken_path.to_str().unwrap()], dir.path());
    assert_eq!(broken.status.code(), Some(2));
}

#[test]
fn binary_sweep_writes_one_directory_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("run.json");
    std::fs::write(&config_path, SMALL_CONFIG).unwrap();
    let out = dir.path().join("sweep");

    let result = run_binary(
        &[
            config_path.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--sweep",
            "scheme.dt=2e-3,1e-3",
        ],
        dir.path(),
    );
    assert!(
        result.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&result.stderr)
    );
    let mut subdirs: Vec<String> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    subdirs.sort();
    assert_eq!(subdirs.len(), 2, "got {subdirs:?}");
    for sub in &subdirs {
        assert!(out.join(sub).join("series.csv").exists());
    }
}
