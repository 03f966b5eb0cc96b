//! Configuration parsing and the scenario runner behind the `simulate`
//! binary.
//!
//! A run is described by a strict JSON document (unknown keys are rejected):
//! mesh spec, scheme spec (`dt` may be the string `"auto"` for `x₁ − x₀`),
//! initial-data family, diagnostic toggles and an optional paired initial
//! datum for the contraction/comparison audits. Execution emits
//! `series.csv`, `profiles.csv`, `onset.json`, `fit.json` and `audits.json`
//! into the output directory and reports a machine-readable failure list;
//! the process exit status is zero exactly when no audit exceeded its slack.

use crate::diagnostics::{
    comparison_audit, contraction_audit, detect_onset, energy_series, entropy_audit,
    fit_equilibrium, loss_audit, rate_check, DiagnosticsError, EventKind, Recorder,
    RecorderOptions, RunRecord,
};
use crate::grid::{GridError, Mesh};
use crate::solver::{
    make_initial_data, run, InitialData, Nonlinearity, Profile, SchemeConfig, SchemeStepper,
    SolverError, Stepper,
};
use serde::Deserialize;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use thiserror::Error;

/// Environment variable overriding the output root directory.
pub const OUTPUT_ENV_VAR: &str = "KOMPANEETS_OUT";

/// Errors from configuration handling and execution.
#[derive(Debug, Error)]
pub enum CliError {
    /// The document is not valid JSON.
    #[error("parse error: {0}")]
    Parse(String),
    /// The document is valid JSON but violates the schema (unknown key,
    /// wrong type, invalid value).
    #[error("schema error: {0}")]
    Schema(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("bad sweep spec: {0}")]
    Sweep(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Mesh parameters.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MeshSpec {
    pub m: usize,
    pub right: f64,
    pub last_spacing: f64,
}

/// Time step: a number, or `"auto"` for `x₁ − x₀`.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum DtSpec {
    Value(f64),
    Keyword(String),
}

impl DtSpec {
    fn resolve(&self, mesh: &Mesh<f64>) -> Result<f64, CliError> {
        match self {
            DtSpec::Value(v) => Ok(*v),
            DtSpec::Keyword(s) if s == "auto" => Ok(mesh.nodes()[1]),
            DtSpec::Keyword(s) => Err(CliError::Schema(format!(
                "dt must be a number or \"auto\", got \"{s}\""
            ))),
        }
    }
}

/// Quadratic-term treatment, by name.
#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum NonlinearitySpec {
    Explicit,
    SemiImplicit,
}

impl From<NonlinearitySpec> for Nonlinearity {
    fn from(spec: NonlinearitySpec) -> Self {
        match spec {
            NonlinearitySpec::Explicit => Nonlinearity::ExplicitQuadratic,
            NonlinearitySpec::SemiImplicit => Nonlinearity::SemiImplicitProduct,
        }
    }
}

/// Scheme parameters.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SchemeSpec {
    pub dt: DtSpec,
    pub nonlinearity: NonlinearitySpec,
    pub t_end: f64,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
}

fn default_record_every() -> usize {
    1
}

/// Initial-data family, by name.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    PlanckMultiple { factor: f64 },
    TruncatedLinear { a: f64, b: f64 },
    Bump { amplitude: f64, center: f64, width: f64 },
    PlanckPlusBump { amplitude: f64, center: f64, width: f64 },
    SuperSolutionSample { gamma: f64 },
    Custom { values: Vec<f64> },
}

impl From<&InitialSpec> for InitialData<f64> {
    fn from(spec: &InitialSpec) -> Self {
        match spec {
            InitialSpec::PlanckMultiple { factor } => InitialData::PlanckMultiple { factor: *factor },
            InitialSpec::TruncatedLinear { a, b } => InitialData::TruncatedLinear { a: *a, b: *b },
            InitialSpec::Bump {
                amplitude,
                center,
                width,
            } => InitialData::Bump {
                amplitude: *amplitude,
                center: *center,
                width: *width,
            },
            InitialSpec::PlanckPlusBump {
                amplitude,
                center,
                width,
            } => InitialData::PlanckPlusBump {
                amplitude: *amplitude,
                center: *center,
                width: *width,
            },
            InitialSpec::SuperSolutionSample { gamma } => {
                InitialData::SuperSolutionSample { gamma: *gamma }
            }
            InitialSpec::Custom { values } => InitialData::Custom {
                values: values.clone(),
            },
        }
    }
}

/// Which optional diagnostics to record and audit.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsToggles {
    pub entropy: bool,
    pub energy: bool,
    pub rate: bool,
    /// Keep a snapshot every this many recorded instants (0 = endpoints).
    pub snapshot_every: usize,
}

impl Default for DiagnosticsToggles {
    fn default() -> Self {
        Self {
            entropy: false,
            energy: false,
            rate: false,
            snapshot_every: 0,
        }
    }
}

/// A fully validated run description.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mesh: MeshSpec,
    pub scheme: SchemeSpec,
    pub initial: InitialSpec,
    #[serde(default)]
    pub diagnostics: DiagnosticsToggles,
    /// Caller's assertion that the initial data obeys the exponential-decay
    /// bound required by the entropy and rate statements.
    #[serde(default)]
    pub exp_decay_assertion: bool,
    /// Second initial datum; enables the contraction and comparison audits.
    #[serde(default)]
    pub paired: Option<InitialSpec>,
    #[serde(default)]
    pub output_dir: Option<String>,
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    match serde_json::from_str::<RunConfig>(text) {
        Ok(cfg) => Ok(cfg),
        Err(e) => {
            if e.is_syntax() || e.is_eof() {
                Err(CliError::Parse(e.to_string()))
            } else {
                Err(CliError::Schema(e.to_string()))
            }
        }
    }
}

/// Shipped scenario presets, selectable with `--preset`.
pub const PRESETS: &[(&str, &str)] = &[
    ("canonical", include_str!("../presets/canonical.json")),
    ("slope", include_str!("../presets/slope.json")),
    ("shock", include_str!("../presets/shock.json")),
    ("subplanck", include_str!("../presets/subplanck.json")),
    ("superplanck", include_str!("../presets/superplanck.json")),
];

/// Returns the preset document with the given name.
pub fn preset(name: &str) -> Option<&'static str> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| *text)
}

/// Outcome of one executed run.
#[derive(Debug)]
pub struct ExecutionReport {
    pub output_dir: PathBuf,
    /// Audit violations; empty means exit status 0.
    pub failures: Vec<String>,
}

/// Resolves the output directory: explicit argument, then the
/// `KOMPANEETS_OUT` environment variable, then the config, then `./out`.
pub fn resolve_output_dir(config: &RunConfig, cli_out: Option<&Path>) -> PathBuf {
    if let Some(dir) = cli_out {
        return dir.to_path_buf();
    }
    if let Ok(dir) = std::env::var(OUTPUT_ENV_VAR) {
        if !dir.is_empty() {
            return PathBuf::from(dir);
        }
    }
    config
        .output_dir
        .as_ref()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("out"))
}

/// Executes a run with the production stepper.
pub fn execute(config: &RunConfig, out_dir: &Path) -> Result<ExecutionReport, CliError> {
    execute_with_stepper(config, out_dir, &mut || Box::new(SchemeStepper::new()))
}

/// Executes a run with steppers supplied by the factory (one per run in the
/// pair); the test suite injects broken steppers through this seam.
pub fn execute_with_stepper(
    config: &RunConfig,
    out_dir: &Path,
    make_stepper: &mut dyn FnMut() -> Box<dyn Stepper<f64>>,
) -> Result<ExecutionReport, CliError> {
    let mesh = Arc::new(Mesh::build_geometric(
        config.mesh.m,
        config.mesh.right,
        config.mesh.last_spacing,
    )?);
    let dt = config.scheme.dt.resolve(&mesh)?;
    let scheme = SchemeConfig::new(
        dt,
        config.scheme.nonlinearity.into(),
        config.scheme.t_end,
        config.scheme.record_every,
    )?;
    let opts = RecorderOptions {
        entropy: config.diagnostics.entropy || config.diagnostics.rate,
        energy: config.diagnostics.energy,
        snapshot_every: config.diagnostics.snapshot_every,
    };
    let mut observe = |initial: Profile<f64>| -> Result<(RunRecord<f64>, Profile<f64>), CliError> {
        let mut recorder = Recorder::new(scheme.dt, opts);
        let mut stepper = make_stepper();
        let final_profile = run(initial, &scheme, &mut *stepper, &mut recorder)?;
        let record = recorder.finish()?;
        Ok((record, final_profile))
    };

    let initial = make_initial_data(&mesh, &(&config.initial).into())?;
    let (record, final_profile) = observe(initial)?;

    let mut failures = Vec::new();
    for event in record.events() {
        if event.kind == EventKind::Instability {
            failures.push(format!("instability at t = {}", event.time));
        }
    }

    let loss = loss_audit(&record)?;
    let n0 = record.transported_masses()[0];
    let loss_slack = 5e-3 * n0.max(f64::MIN_POSITIVE);
    if loss.max_residual > loss_slack {
        failures.push(format!(
            "loss audit: residual {:.3e} exceeds {:.3e} (at t = {})",
            loss.max_residual, loss_slack, loss.time_of_max
        ));
    }

    let onset = detect_onset(&record, None)?;
    let fit = match fit_equilibrium(&final_profile) {
        Ok(fit) => Some(fit),
        Err(DiagnosticsError::ZeroMass(_)) => None,
        Err(e) => return Err(e.into()),
    };

    let entropy = if config.diagnostics.entropy && config.exp_decay_assertion {
        let audit = entropy_audit(&record, true)?;
        if audit.increase_events > 0 {
            failures.push(format!(
                "entropy audit: {} increase events above 1e-8",
                audit.increase_events
            ));
        }
        Some(audit)
    } else {
        None
    };

    let energy = if config.diagnostics.energy {
        let audit = energy_series(&record)?;
        if !audit.pass {
            failures.push("energy audit: growth bound violated".into());
        }
        Some(audit)
    } else {
        None
    };

    let rate = match (&fit, config.diagnostics.rate && config.exp_decay_assertion) {
        (Some(fit), true) => {
            let report = rate_check(&record, fit, true)?;
            if !report.all_hold && !report.truncated {
                failures.push("rate check: inequality violated with exact tail".into());
            }
            Some(report)
        }
        _ => None,
    };

    let mut paired_summary = serde_json::Value::Null;
    if let Some(second) = &config.paired {
        let initial_b = make_initial_data(&mesh, &second.into())?;
        let (record_b, _) = observe(initial_b)?;
        let contraction = contraction_audit(&record, &record_b)?;
        if !contraction.pass {
            failures.push(format!(
                "contraction audit: worst margin {:.3e} below 0",
                contraction.worst_margin
            ));
        }
        // Comparison runs in whichever direction the initial data is
        // ordered; if neither dominates, the audit is skipped.
        let a0 = record.snapshots()[0].values();
        let b0 = record_b.snapshots()[0].values();
        let a_below = a0.iter().zip(b0).all(|(x, y)| x <= y);
        let b_below = b0.iter().zip(a0).all(|(x, y)| x <= y);
        let comparison = if a_below {
            Some(comparison_audit(&record, &record_b)?)
        } else if b_below {
            Some(comparison_audit(&record_b, &record)?)
        } else {
            None
        };
        if let Some(c) = &comparison {
            if !c.pass {
                failures.push(format!(
                    "comparison audit: excess {:.3e} above {:.3e}",
                    c.max_excess, c.threshold
                ));
            }
        }
        paired_summary = serde_json::json!({
            "contraction": {
                "worst_margin": contraction.worst_margin,
                "pass": contraction.pass,
            },
            "comparison": comparison.map(|c| serde_json::json!({
                "max_excess": c.max_excess,
                "threshold": c.threshold,
                "pass": c.pass,
            })),
        });
    }

    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    write_series_csv(&record, &out_dir.join("series.csv"))?;
    write_profiles_csv(&record, &out_dir.join("profiles.csv"))?;
    write_json(
        &out_dir.join("onset.json"),
        &serde_json::json!({
            "t_star_detected": onset.t_star_detected,
            "threshold": onset.threshold,
            "riccati_bound": onset.riccati_bound,
            "mass_condition_holds": onset.mass_condition_holds,
            "persistence_dips": onset.persistence_dips,
            "detection_at_10x": onset.detection_at_10x,
            "detection_at_tenth": onset.detection_at_tenth,
        }),
    )?;
    write_json(
        &out_dir.join("fit.json"),
        &match &fit {
            Some(fit) => serde_json::json!({
                "mu_hat": fit.mu_hat,
                "l1_distance": fit.l1_distance,
                "predicted_number": fit.predicted_number,
            }),
            None => serde_json::json!({
                "mu_hat": null,
                "l1_distance": null,
                "predicted_number": null,
            }),
        },
    )?;
    write_json(
        &out_dir.join("audits.json"),
        &serde_json::json!({
            "loss": {
                "max_residual": loss.max_residual,
                "time_of_max": loss.time_of_max,
                "slack": loss_slack,
            },
            "entropy": entropy.as_ref().map(|a| serde_json::json!({
                "max_residual": a.max_residual,
                "increase_events": a.increase_events,
            })),
            "energy": energy.as_ref().map(|a| serde_json::json!({ "pass": a.pass })),
            "rate": rate.as_ref().map(|r| serde_json::json!({
                "all_hold": r.all_hold,
                "truncated": r.truncated,
                "constant": r.constant,
            })),
            "paired": paired_summary,
            "negativity_events": record.events().iter()
                .filter(|e| e.kind == EventKind::Negativity).count(),
            "failures": failures,
        }),
    )?;

    Ok(ExecutionReport {
        output_dir: out_dir.to_path_buf(),
        failures,
    })
}

fn write_series_csv(record: &RunRecord<f64>, path: &Path) -> Result<(), CliError> {
    let mut out = Vec::new();
    let mut header = String::from("t,N,n0,loss_integral");
    if record.entropies().is_some() {
        header.push_str(",H,D");
    }
    if record.energies().is_some() {
        header.push_str(",energy");
    }
    writeln!(out, "{header}").expect("writing to memory cannot fail");
    for j in 0..record.times().len() {
        let mut line = format!(
            "{:.16e},{:.16e},{:.16e},{:.16e}",
            record.times()[j],
            record.photon_numbers()[j],
            record.boundary_values()[j],
            record.loss_integrals()[j],
        );
        if let (Some(h), Some(d)) = (record.entropies(), record.dissipations()) {
            line.push_str(&format!(",{:.16e},{:.16e}", h[j], d[j]));
        }
        if let Some(e) = record.energies() {
            line.push_str(&format!(",{:.16e}", e[j]));
        }
        writeln!(out, "{line}").expect("writing to memory cannot fail");
    }
    fs::write(path, out).map_err(io_err(path))
}

fn write_profiles_csv(record: &RunRecord<f64>, path: &Path) -> Result<(), CliError> {
    let mut out = Vec::new();
    writeln!(out, "t,x,n").expect("writing to memory cannot fail");
    for snapshot in record.snapshots() {
        let t = snapshot.time();
        for (x, n) in record.mesh().nodes().iter().zip(snapshot.values()) {
            writeln!(out, "{:.16e},{:.16e},{:.16e}", t, x, n)
                .expect("writing to memory cannot fail");
        }
    }
    fs::write(path, out).map_err(io_err(path))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("report values are serializable");
    fs::write(path, text + "\n").map_err(io_err(path))
}

/// Parsed `--sweep key=v1,v2,…` argument: a dotted path into the config
/// document and the JSON values to substitute.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub path: Vec<String>,
    pub values: Vec<serde_json::Value>,
}

impl SweepSpec {
    pub fn parse(arg: &str) -> Result<Self, CliError> {
        let (key, values) = arg
            .split_once('=')
            .ok_or_else(|| CliError::Sweep(format!("expected key=v1,v2,..., got \"{arg}\"")))?;
        if key.is_empty() {
            return Err(CliError::Sweep("empty sweep key".into()));
        }
        let values: Vec<serde_json::Value> = values
            .split(',')
            .map(|v| {
                serde_json::from_str(v)
                    .unwrap_or_else(|_| serde_json::Value::String(v.to_string()))
            })
            .collect();
        if values.is_empty() {
            return Err(CliError::Sweep("sweep needs at least one value".into()));
        }
        Ok(Self {
            path: key.split('.').map(str::to_string).collect(),
            values,
        })
    }

    /// A filesystem-safe label for one swept value.
    pub fn label(&self, value: &serde_json::Value) -> String {
        let key = self.path.join("-");
        let val = value
            .to_string()
            .replace(['"', '/', '\\'], "")
            .replace('.', "_");
        format!("{key}-{val}")
    }
}

/// Applies one swept value to the raw config document and reparses it.
pub fn apply_sweep(
    text: &str,
    spec: &SweepSpec,
    value: &serde_json::Value,
) -> Result<RunConfig, CliError> {
    let mut doc: serde_json::Value =
        serde_json::from_str(text).map_err(|e| CliError::Parse(e.to_string()))?;
    let bad_path = || {
        CliError::Sweep(format!(
            "path {} does not address an object",
            spec.path.join(".")
        ))
    };
    let mut cursor = &mut doc;
    let last = spec.path.last().expect("parse() guarantees a nonempty path");
    for key in &spec.path[..spec.path.len() - 1] {
        cursor = cursor
            .as_object_mut()
            .ok_or_else(bad_path)?
            .entry(key.clone())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    cursor
        .as_object_mut()
        .ok_or_else(bad_path)?
        .insert(last.clone(), value.clone());
    parse_config(&doc.to_string())
}

/// Runs a full sweep: one subdirectory per value, collecting the reports.
pub fn execute_sweep(
    text: &str,
    spec: &SweepSpec,
    out_root: &Path,
) -> Result<Vec<(String, ExecutionReport)>, CliError> {
    let mut reports = Vec::new();
    for value in &spec.values {
        let config = apply_sweep(text, spec, value)?;
        let label = spec.label(value);
        let report = execute(&config, &out_root.join(&label))?;
        reports.push((label, report));
    }
    Ok(reports)
}
