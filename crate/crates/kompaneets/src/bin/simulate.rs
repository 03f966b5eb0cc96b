//! Command-line runner for Kompaneets-equation scenarios.

use clap::Parser;
use kompaneets::cli::{
    execute, execute_sweep, parse_config, preset, resolve_output_dir, CliError, SweepSpec,
};
use std::path::PathBuf;
use std::process::ExitCode;

/// Simulate the Kompaneets equation and audit it against the theory.
#[derive(Debug, Parser)]
#[command(name = "simulate", version)]
struct Args {
    /// Run configuration document (JSON). Optional when --preset is given.
    config: Option<PathBuf>,

    /// Output directory (overrides the config and the environment).
    #[arg(long)]
    out: Option<PathBuf>,

    /// Shipped scenario preset to run instead of a config file.
    #[arg(long, value_parser = ["canonical", "slope", "shock", "subplanck", "superplanck"])]
    preset: Option<String>,

    /// Parameter sweep, e.g. --sweep scheme.dt=2e-3,1e-3 (dotted config
    /// path); runs once per value into per-value subdirectories.
    #[arg(long)]
    sweep: Option<String>,
}

fn load_document(args: &Args) -> Result<String, CliError> {
    if let Some(name) = &args.preset {
        return Ok(preset(name).expect("clap validated the preset name").to_string());
    }
    let path = args.config.as_ref().ok_or_else(|| {
        CliError::Parse("either a config file or --preset is required".into())
    })?;
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.clone(),
        source,
    })
}

fn main() -> ExitCode {
    env_logger::init();
    let args = Args::parse();
    match run(&args) {
        Ok(failures) if failures.is_empty() => ExitCode::SUCCESS,
        Ok(_) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(args: &Args) -> Result<Vec<String>, CliError> {
    let text = load_document(args)?;
    let config = parse_config(&text)?;
    let out_dir = resolve_output_dir(&config, args.out.as_deref());
    let mut failures = Vec::new();
    if let Some(sweep) = &args.sweep {
        let spec = SweepSpec::parse(sweep)?;
        for (label, report) in execute_sweep(&text, &spec, &out_dir)? {
            for f in &report.failures {
                failures.push(format!("{label}: {f}"));
            }
            print_summary(&label, &report.output_dir, &report.failures);
        }
    } else {
        let report = execute(&config, &out_dir)?;
        failures = report.failures.clone();
        print_summary("run", &report.output_dir, &report.failures);
    }
    Ok(failures)
}

fn print_summary(label: &str, out_dir: &std::path::Path, failures: &[String]) {
    let summary = serde_json::json!({
        "run": label,
        "output_dir": out_dir,
        "status": if failures.is_empty() { "pass" } else { "fail" },
        "failures": failures,
    });
    println!("{summary}");
}
