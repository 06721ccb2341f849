//! Scenario files, trajectory CSV and the JSON summary report.
//!
//! Scenario files are TOML. Units are carried by the key suffix (`_kg`, `_m`,
//! `_s`, `_deg`, `_rad_s`, ...); degrees are converted to radians on load.
//! Unknown keys are rejected.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{self, PhaseMetrics, TurningOrderings, SETTLE_MARGIN};
use crate::control::{ControllerSet, PendulumCtrlConfig, Segment, Setpoint, SetpointSchedule, SpeedCtrlConfig};
use crate::dynamics::StateVector;
use crate::integrator::{self, IntegratorConfig, Sample, Trajectory};
use crate::params::{Model, RobotParams};

pub const SUMMARY_SCHEMA: &str = "spherebot.summary";
pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

/// Column order of `trajectory.csv`.
pub const CSV_COLUMNS: [&str; 20] = [
    "t", "phi", "theta", "psi", "X", "Z", "phid", "thetad", "psid", "Xd", "Zd", "beta", "betad", "T_s", "T_p",
    "KE", "PE", "E_residual", "r_x", "r_z",
];

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("invalid scenario file: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("trajectory CSV does not match the expected schema: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSection {
    pub m_h_kg: f64,
    pub m_y_kg: f64,
    pub m_p_kg: f64,
    pub r_s_m: f64,
    pub r_p_m: f64,
    pub g_m_s2: f64,
    #[serde(default)]
    pub freeze_beta: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialStateSection {
    pub phi_deg: f64,
    pub theta_deg: f64,
    pub psi_deg: f64,
    pub x_m: f64,
    pub z_m: f64,
    pub phid_rad_s: f64,
    pub thetad_rad_s: f64,
    pub psid_rad_s: f64,
    pub xd_m_s: f64,
    pub zd_m_s: f64,
    pub beta_deg: f64,
    pub betad_rad_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleEntry {
    pub t_start_s: f64,
    pub beta_ref_deg: f64,
    pub psid_ref_rad_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PendulumSection {
    pub kp: f64,
    pub kd: f64,
    pub feedforward: bool,
    pub torque_limit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeedSection {
    pub kp: f64,
    pub torque_limit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllersSection {
    pub pendulum: PendulumSection,
    pub speed: SpeedSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSection {
    pub rtol: f64,
    pub atol: f64,
    pub h_init_s: f64,
    pub h_max_s: f64,
    pub sample_dt_s: f64,
    pub projection: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub t_end_s: f64,
    pub params: ParamsSection,
    pub initial_state: InitialStateSection,
    pub schedule: Vec<ScheduleEntry>,
    pub controllers: ControllersSection,
    pub integrator: IntegratorSection,
}

/// Everything needed to run a scenario, in internal units.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub model: Model,
    pub x0: StateVector,
    pub schedule: SetpointSchedule,
    pub controllers: ControllerSet,
    pub integrator: IntegratorConfig,
    pub t_end: f64,
}

/// Config key of a `RobotParams` field.
fn config_key(field: &str) -> &str {
    match field {
        "m_hull" => "m_h_kg",
        "m_yoke" => "m_y_kg",
        "m_pendulum" => "m_p_kg",
        "r_sphere" => "r_s_m",
        "r_pendulum" => "r_p_m",
        "gravity" => "g_m_s2",
        other => other,
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn robot_params(&self) -> RobotParams {
        let p = &self.params;
        RobotParams {
            m_hull: p.m_h_kg,
            m_yoke: p.m_y_kg,
            m_pendulum: p.m_p_kg,
            r_sphere: p.r_s_m,
            r_pendulum: p.r_p_m,
            gravity: p.g_m_s2,
        }
    }

    pub fn initial_state(&self) -> StateVector {
        let s = &self.initial_state;
        let mut x = StateVector::default();
        x[StateVector::PHI] = s.phi_deg.to_radians();
        x[StateVector::THETA] = s.theta_deg.to_radians();
        x[StateVector::PSI] = s.psi_deg.to_radians();
        x[StateVector::X] = s.x_m;
        x[StateVector::Z] = s.z_m;
        x[StateVector::PHID] = s.phid_rad_s;
        x[StateVector::THETAD] = s.thetad_rad_s;
        x[StateVector::PSID] = s.psid_rad_s;
        x[StateVector::XD] = s.xd_m_s;
        x[StateVector::ZD] = s.zd_m_s;
        x[StateVector::BETA] = s.beta_deg.to_radians();
        x[StateVector::BETAD] = s.betad_rad_s;
        x
    }

    /// Validates every section and converts to internal units.
    pub fn build(&self) -> Result<Scenario, ScenarioError> {
        let invalid = |e: crate::Error| ScenarioError::Invalid(e.to_string());
        if !(self.t_end_s.is_finite() && self.t_end_s > 0.0) {
            return Err(ScenarioError::Invalid(format!("t_end_s must be > 0, got {}", self.t_end_s)));
        }
        let model = Model::with_options(self.robot_params(), self.params.freeze_beta).map_err(|e| match e {
            crate::Error::InvalidParameter { name, reason } => {
                ScenarioError::Invalid(format!("params.{}: {reason}", config_key(name)))
            }
            e => invalid(e),
        })?;
        let segments = self
            .schedule
            .iter()
            .map(|e| Segment {
                t_start: e.t_start_s,
                setpoint: Setpoint {
                    beta_ref: e.beta_ref_deg.to_radians(),
                    psid_ref: e.psid_ref_rad_s,
                },
            })
            .collect();
        let schedule = SetpointSchedule::new(segments).map_err(invalid)?;
        if let Some(bp) = schedule.breakpoints().find(|&t| t >= self.t_end_s) {
            return Err(ScenarioError::Invalid(format!(
                "schedule breakpoint {bp} s is not before t_end_s = {}",
                self.t_end_s
            )));
        }
        analysis::segment_phases(self.t_end_s, &schedule, SETTLE_MARGIN)
            .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        let c = &self.controllers;
        let controllers = ControllerSet {
            pendulum: PendulumCtrlConfig {
                kp: c.pendulum.kp,
                kd: c.pendulum.kd,
                feedforward_enabled: c.pendulum.feedforward,
                torque_limit: c.pendulum.torque_limit,
            },
            speed: SpeedCtrlConfig {
                kp: c.speed.kp,
                torque_limit: c.speed.torque_limit,
            },
        };
        controllers.validate().map_err(invalid)?;
        let i = &self.integrator;
        let integrator = IntegratorConfig {
            rtol: i.rtol,
            atol: i.atol,
            h_init: i.h_init_s,
            h_max: i.h_max_s,
            sample_dt: i.sample_dt_s,
            projection_enabled: i.projection,
        };
        integrator.validate().map_err(invalid)?;
        let x0 = self.initial_state();
        if !x0.is_finite() {
            return Err(ScenarioError::Invalid("initial state has non-finite entries".into()));
        }
        crate::kinematics::check_gimbal(x0[StateVector::THETA]).map_err(invalid)?;
        Ok(Scenario {
            model,
            x0,
            schedule,
            controllers,
            integrator,
            t_end: self.t_end_s,
        })
    }
}

impl Scenario {
    pub fn run(&self) -> crate::Result<Trajectory> {
        integrator::integrate(&self.model, &self.schedule, &self.controllers, &self.x0, self.t_end, &self.integrator)
    }

    pub fn expected_samples(&self) -> usize {
        integrator::sample_count(self.t_end, self.integrator.sample_dt)
    }
}

/// Formats a value with 17 significant digits; parses back to the same `f64`.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_csv(samples: &[Sample]) -> String {
    let mut out = String::with_capacity(samples.len() * CSV_COLUMNS.len() * 24);
    out.push_str(&CSV_COLUMNS.join(","));
    out.push('\n');
    for s in samples {
        let mut fields = Vec::with_capacity(CSV_COLUMNS.len());
        fields.push(s.t);
        fields.extend(s.state.0.iter().copied());
        fields.extend([s.t_s, s.t_p, s.kinetic, s.potential, s.energy_residual, s.r_x, s.r_z]);
        for (i, v) in fields.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            let _ = write!(out, "{}", format_f64(*v));
        }
        out.push('\n');
    }
    out
}

pub fn read_csv(text: &str) -> Result<Vec<Sample>, ScenarioError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| ScenarioError::Csv(e.to_string()))?;
    if header.iter().ne(CSV_COLUMNS.iter().copied()) {
        return Err(ScenarioError::Csv(format!(
            "header must be `{}`, got `{}`",
            CSV_COLUMNS.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut samples = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| ScenarioError::Csv(format!("row {}: {e}", row + 1)))?;
        if record.len() != CSV_COLUMNS.len() {
            return Err(ScenarioError::Csv(format!(
                "row {} has {} fields, expected {}",
                row + 1,
                record.len(),
                CSV_COLUMNS.len()
            )));
        }
        let mut v = [0.0; 20];
        for (i, field) in record.iter().enumerate() {
            v[i] = field
                .trim()
                .parse::<f64>()
                .map_err(|e| ScenarioError::Csv(format!("row {} column {}: {e}", row + 1, CSV_COLUMNS[i])))?;
        }
        samples.push(Sample {
            t: v[0],
            state: StateVector::from_slice(&v[1..13]),
            t_s: v[13],
            t_p: v[14],
            kinetic: v[15],
            potential: v[16],
            energy_residual: v[17],
            r_x: v[18],
            r_z: v[19],
        });
    }
    if samples.windows(2).any(|w| !(w[1].t > w[0].t)) {
        return Err(ScenarioError::Csv("time column is not strictly increasing".into()));
    }
    Ok(samples)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryReport {
    pub schema: String,
    pub schema_version: u32,
    pub samples: usize,
    pub t_end_s: f64,
    pub settle_margin_s: f64,
    pub phases: Vec<PhaseMetrics>,
    pub orderings: Option<TurningOrderings>,
    /// Largest `|E(t) - E(0) - W(t)|` over all samples, J.
    pub energy_balance_max_abs_j: f64,
    /// Largest `max(|r_x|, |r_z|)` over all samples, m/s.
    pub constraint_residual_max_m_s: f64,
    pub config: ScenarioConfig,
}

/// Builds the summary of a run from its samples alone, so that a stored CSV
/// reproduces the report of the run that wrote it.
pub fn summarize(config: &ScenarioConfig, scenario: &Scenario, samples: &[Sample]) -> Result<SummaryReport, ScenarioError> {
    let t_final = samples
        .last()
        .map(|s| s.t)
        .ok_or_else(|| ScenarioError::Csv("trajectory has no samples".into()))?;
    let windows = analysis::segment_phases(t_final, &scenario.schedule, SETTLE_MARGIN)
        .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
    let phases: Vec<PhaseMetrics> = windows.iter().map(|w| analysis::phase_metrics(w, samples)).collect();
    let orderings = TurningOrderings::evaluate(&phases);
    Ok(SummaryReport {
        schema: SUMMARY_SCHEMA.to_string(),
        schema_version: SUMMARY_SCHEMA_VERSION,
        samples: samples.len(),
        t_end_s: scenario.t_end,
        settle_margin_s: SETTLE_MARGIN,
        phases,
        orderings,
        energy_balance_max_abs_j: samples.iter().map(|s| s.energy_residual.abs()).fold(0.0, f64::max),
        constraint_residual_max_m_s: samples.iter().map(|s| s.r_x.abs().max(s.r_z.abs())).fold(0.0, f64::max),
        config: config.clone(),
    })
}

pub fn summary_json(report: &SummaryReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("summary serializes");
    s.push('\n');
    s
}
