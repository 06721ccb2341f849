//! Command line front end.
//!
//! ```text
//! spherebot simulate --config turning.config --out run/ [--sweep params.m_p_kg=0.4:0.6:5]
//! spherebot analyze  --traj run/trajectory.csv --config turning.config --out check/
//! ```
//!
//! Exit status: 0 on success, 2 for invalid input (config, CSV schema), 1 for
//! numerical failures and I/O errors.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::scenario::{self, ScenarioConfig, ScenarioError};

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const RUN_INFO_FILE: &str = "run_info.json";

#[derive(Debug, Parser)]
#[command(name = "spherebot", version, about = "Pendulum-actuated spherical robot simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario and write trajectory.csv and summary.json.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Sweep one config value, `key=min:max:steps`. `key` is a dotted path
        /// into the scenario file (`controllers.pendulum.kp`); bare names
        /// refer to the `params` table.
        #[arg(long)]
        sweep: Option<String>,
    },
    /// Recompute summary.json from a stored trajectory.
    Analyze {
        #[arg(long)]
        traj: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("invalid sweep specification `{0}`: expected key=min:max:steps")]
    Sweep(String),
    #[error("simulation failed: {0}")]
    Numerical(#[from] crate::Error),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Scenario(ScenarioError::Read { .. }) => 2,
            CliError::Scenario(_) | CliError::Sweep(_) => 2,
            CliError::Numerical(_) | CliError::Io { .. } => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.display().to_string(), source }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(io_err(path))
}

#[derive(Debug, Serialize)]
struct RunInfo {
    wall_clock_s: f64,
    accepted_steps: usize,
    rejected_steps: usize,
    evaluations: usize,
    max_dynamics_residual: f64,
    max_constraint_residual: f64,
}

/// Runs one scenario into `out`. Returns the wall-clock time of the integration.
pub fn simulate_config(config: &ScenarioConfig, out: &Path) -> Result<f64, CliError> {
    let scenario = config.build()?;
    let start = Instant::now();
    let traj = scenario.run()?;
    let wall = start.elapsed().as_secs_f64();
    let summary = scenario::summarize(config, &scenario, &traj.samples)?;

    std::fs::create_dir_all(out).map_err(io_err(out))?;
    write_file(&out.join(TRAJECTORY_FILE), &scenario::write_csv(&traj.samples))?;
    write_file(&out.join(SUMMARY_FILE), &scenario::summary_json(&summary))?;
    // Timing varies run to run, so it stays out of the summary.
    let info = RunInfo {
        wall_clock_s: wall,
        accepted_steps: traj.stats.accepted_steps,
        rejected_steps: traj.stats.rejected_steps,
        evaluations: traj.stats.evaluations,
        max_dynamics_residual: traj.stats.max_dynamics_residual,
        max_constraint_residual: traj.stats.max_constraint_residual,
    };
    let mut text = serde_json::to_string_pretty(&info).expect("run info serializes");
    text.push('\n');
    write_file(&out.join(RUN_INFO_FILE), &text)?;
    Ok(wall)
}

pub fn simulate(config_path: &Path, out: &Path) -> Result<(), CliError> {
    let config = ScenarioConfig::load(config_path)?;
    simulate_config(&config, out).map(|_| ())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub key: Vec<String>,
    pub values: Vec<f64>,
}

pub fn parse_sweep(spec: &str) -> Result<SweepSpec, CliError> {
    let bad = || CliError::Sweep(spec.to_string());
    let (key, range) = spec.split_once('=').ok_or_else(bad)?;
    let parts: Vec<&str> = range.split(':').collect();
    let [min, max, steps] = parts.as_slice() else { return Err(bad()) };
    let min: f64 = min.trim().parse().map_err(|_| bad())?;
    let max: f64 = max.trim().parse().map_err(|_| bad())?;
    let steps: usize = steps.trim().parse().map_err(|_| bad())?;
    if steps == 0 || !min.is_finite() || !max.is_finite() || key.trim().is_empty() {
        return Err(bad());
    }
    let mut key: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if key.len() == 1 {
        key.insert(0, "params".to_string());
    }
    let values = if steps == 1 {
        vec![min]
    } else {
        (0..steps).map(|i| min + (max - min) * i as f64 / (steps - 1) as f64).collect()
    };
    Ok(SweepSpec { key, values })
}

fn with_value(config: &ScenarioConfig, key: &[String], value: f64) -> Result<ScenarioConfig, CliError> {
    let mut doc = toml::Value::try_from(config).map_err(|e| CliError::Sweep(e.to_string()))?;
    let mut slot = &mut doc;
    for part in key {
        slot = slot
            .get_mut(part.as_str())
            .ok_or_else(|| CliError::Sweep(format!("unknown key `{}`", key.join("."))))?;
    }
    if !slot.is_float() {
        return Err(CliError::Sweep(format!("`{}` is not a numeric field", key.join("."))));
    }
    *slot = toml::Value::Float(value);
    doc.try_into().map_err(|e: toml::de::Error| CliError::Scenario(ScenarioError::Parse(e.to_string())))
}

#[derive(Debug, Serialize)]
struct SweepEntry {
    index: usize,
    value: f64,
    dir: String,
    status: String,
    exit_code: i32,
}

/// Runs one simulation per sweep value on the rayon pool, each into its own
/// subdirectory of `out`. Returns the worst exit code.
pub fn simulate_sweep(config_path: &Path, out: &Path, spec: &str) -> Result<i32, CliError> {
    let base = ScenarioConfig::load(config_path)?;
    let sweep = parse_sweep(spec)?;
    let configs = sweep
        .values
        .iter()
        .map(|&v| with_value(&base, &sweep.key, v))
        .collect::<Result<Vec<_>, _>>()?;
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let entries: Vec<SweepEntry> = configs
        .par_iter()
        .enumerate()
        .map(|(i, cfg)| {
            let dir = format!("run_{i:03}");
            let (status, exit_code) = match simulate_config(cfg, &out.join(&dir)) {
                Ok(_) => ("ok".to_string(), 0),
                Err(e) => (e.to_string(), e.exit_code()),
            };
            SweepEntry { index: i, value: sweep.values[i], dir, status, exit_code }
        })
        .collect();
    #[derive(Serialize)]
    struct Index<'a> {
        key: String,
        runs: &'a [SweepEntry],
    }
    let index = Index { key: sweep.key.join("."), runs: &entries };
    let mut text = serde_json::to_string_pretty(&index).expect("sweep index serializes");
    text.push('\n');
    write_file(&out.join("sweep.json"), &text)?;
    Ok(entries.iter().map(|e| e.exit_code).max().unwrap_or(0))
}

pub fn analyze(traj_path: &Path, config_path: &Path, out: &Path) -> Result<(), CliError> {
    let config = ScenarioConfig::load(config_path)?;
    let scenario = config.build()?;
    let text = std::fs::read_to_string(traj_path).map_err(|source| {
        CliError::Scenario(ScenarioError::Read { path: traj_path.display().to_string(), source })
    })?;
    let samples = scenario::read_csv(&text)?;
    let expected = scenario.expected_samples();
    if samples.len() != expected {
        return Err(ScenarioError::Csv(format!(
            "expected {expected} samples for t_end_s = {} and sample_dt_s = {}, found {}",
            scenario.t_end,
            scenario.integrator.sample_dt,
            samples.len()
        ))
        .into());
    }
    let summary = scenario::summarize(&config, &scenario, &samples)?;
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    write_file(&out.join(SUMMARY_FILE), &scenario::summary_json(&summary))
}

/// Dispatches a parsed command line; returns the process exit status.
pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Simulate { config, out, sweep: None } => simulate(&config, &out).map(|_| 0),
        Command::Simulate { config, out, sweep: Some(spec) } => simulate_sweep(&config, &out, &spec),
        Command::Analyze { traj, config, out } => analyze(&traj, &config, &out).map(|_| 0),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_parsing() {
        let s = parse_sweep("m_p_kg=0.4:0.6:3").unwrap();
        assert_eq!(s.key, vec!["params", "m_p_kg"]);
        assert_eq!(s.values.len(), 3);
        assert!((s.values[1] - 0.5).abs() < 1e-15);
        let s = parse_sweep("controllers.pendulum.kp=10:30:1").unwrap();
        assert_eq!(s.key, vec!["controllers", "pendulum", "kp"]);
        assert_eq!(s.values, vec![10.0]);
        for bad in ["m_p_kg", "m_p_kg=1:2", "m_p_kg=a:2:3", "m_p_kg=1:2:0", "=1:2:3"] {
            assert!(parse_sweep(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn sweep_value_substitution() {
        let base = ScenarioConfig::from_toml_str(include_str!("../scenarios/straight.config")).unwrap();
        let cfg = with_value(&base, &["params".into(), "m_p_kg".into()], 0.6).unwrap();
        assert_eq!(cfg.params.m_p_kg, 0.6);
        assert!(with_value(&base, &["params".into(), "nope".into()], 1.0).is_err());
        assert!(with_value(&base, &["integrator".into(), "projection".into()], 1.0).is_err());
    }
}
