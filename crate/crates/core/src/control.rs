//! Pendulum-angle and forward-speed controllers and their setpoint schedule.
//!
//! Both controllers are memoryless: torques are pure functions of the current
//! state and setpoint, so they can be evaluated inside every derivative call.

use serde::{Deserialize, Serialize};

use crate::dynamics::StateVector;
use crate::error::{Error, Result};
use crate::params::RobotParams;

/// Gravity feedforward plus PD feedback on the pendulum angle `beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PendulumCtrlConfig {
    /// N m / rad
    pub kp: f64,
    /// N m s / rad
    pub kd: f64,
    pub feedforward_enabled: bool,
    /// N m
    pub torque_limit: f64,
}

impl Default for PendulumCtrlConfig {
    fn default() -> Self {
        Self {
            kp: 20.0,
            kd: 2.0,
            feedforward_enabled: true,
            torque_limit: 50.0,
        }
    }
}

impl PendulumCtrlConfig {
    pub fn validate(&self) -> Result<()> {
        validate_gains("pendulum", &[self.kp, self.kd], self.torque_limit)
    }
}

/// Proportional feedback on the forward spin rate `psid`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedCtrlConfig {
    /// N m s / rad
    pub kp: f64,
    /// N m
    pub torque_limit: f64,
}

impl Default for SpeedCtrlConfig {
    fn default() -> Self {
        Self { kp: 10.0, torque_limit: 50.0 }
    }
}

impl SpeedCtrlConfig {
    pub fn validate(&self) -> Result<()> {
        validate_gains("speed", &[self.kp], self.torque_limit)
    }
}

fn validate_gains(which: &str, gains: &[f64], limit: f64) -> Result<()> {
    if gains.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
        return Err(Error::InvalidParameter {
            name: "controller gain",
            reason: format!("{which} controller gains must be finite and >= 0"),
        });
    }
    if !(limit > 0.0) || limit.is_nan() {
        return Err(Error::InvalidParameter {
            name: "torque_limit",
            reason: format!("{which} controller torque limit must be > 0, got {limit}"),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ControllerSet {
    pub pendulum: PendulumCtrlConfig,
    pub speed: SpeedCtrlConfig,
}

impl ControllerSet {
    pub fn validate(&self) -> Result<()> {
        self.pendulum.validate()?;
        self.speed.validate()
    }

    /// `(T_s, T_p)` for the given state and setpoints.
    pub fn torques(&self, x: &StateVector, sp: Setpoint, p: &RobotParams) -> (f64, f64) {
        (
            speed_torque(x, sp.psid_ref, &self.speed),
            pendulum_torque(x, sp.beta_ref, &self.pendulum, p),
        )
    }
}

/// Static torque the pendulum motor must supply to hold the pendulum at an
/// angle `theta + beta` from the vertical.
pub fn gravity_feedforward(x: &StateVector, p: &RobotParams) -> f64 {
    p.m_pendulum * p.gravity * p.r_pendulum * (x[StateVector::THETA] + x[StateVector::BETA]).sin()
}

pub fn pendulum_torque(x: &StateVector, beta_ref: f64, cfg: &PendulumCtrlConfig, p: &RobotParams) -> f64 {
    let ff = if cfg.feedforward_enabled { gravity_feedforward(x, p) } else { 0.0 };
    let fb = cfg.kp * (beta_ref - x[StateVector::BETA]) - cfg.kd * x[StateVector::BETAD];
    (ff + fb).clamp(-cfg.torque_limit, cfg.torque_limit)
}

pub fn speed_torque(x: &StateVector, psid_ref: f64, cfg: &SpeedCtrlConfig) -> f64 {
    (cfg.kp * (psid_ref - x[StateVector::PSID])).clamp(-cfg.torque_limit, cfg.torque_limit)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Setpoint {
    /// rad
    pub beta_ref: f64,
    /// rad/s
    pub psid_ref: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    /// s
    pub t_start: f64,
    #[serde(flatten)]
    pub setpoint: Setpoint,
}

/// Piecewise-constant, right-continuous setpoint trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetpointSchedule {
    segments: Vec<Segment>,
}

impl SetpointSchedule {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        let first = segments
            .first()
            .ok_or_else(|| Error::Schedule("schedule has no segments".into()))?;
        if first.t_start != 0.0 {
            return Err(Error::Schedule(format!(
                "first segment must start at t = 0, got {}",
                first.t_start
            )));
        }
        for pair in segments.windows(2) {
            if !(pair[1].t_start > pair[0].t_start) {
                return Err(Error::Schedule(format!(
                    "segment start times must strictly increase ({} then {})",
                    pair[0].t_start, pair[1].t_start
                )));
            }
        }
        if segments
            .iter()
            .any(|s| !(s.t_start.is_finite() && s.setpoint.beta_ref.is_finite() && s.setpoint.psid_ref.is_finite()))
        {
            return Err(Error::Schedule("non-finite schedule entry".into()));
        }
        Ok(Self { segments })
    }

    /// Single segment holding one setpoint forever.
    pub fn constant(beta_ref: f64, psid_ref: f64) -> Self {
        Self {
            segments: vec![Segment {
                t_start: 0.0,
                setpoint: Setpoint { beta_ref, psid_ref },
            }],
        }
    }

    /// Straight roll, a constant pendulum offset of 15 degrees from t = 5 s to
    /// t = 20 s, then straight again; spin-rate reference 1 rad/s throughout.
    pub fn turning() -> Self {
        let seg = |t_start: f64, beta_deg: f64| Segment {
            t_start,
            setpoint: Setpoint {
                beta_ref: beta_deg.to_radians(),
                psid_ref: 1.0,
            },
        };
        Self {
            segments: vec![seg(0.0, 0.0), seg(5.0, 15.0), seg(20.0, 0.0)],
        }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Segment start times after t = 0.
    pub fn breakpoints(&self) -> impl Iterator<Item = f64> + '_ {
        self.segments.iter().skip(1).map(|s| s.t_start)
    }

    pub fn segment_index(&self, t: f64) -> Result<usize> {
        if !(t >= 0.0) {
            return Err(Error::Schedule(format!("lookup at t = {t} precedes the schedule")));
        }
        Ok(self.segments.partition_point(|s| s.t_start <= t) - 1)
    }

    pub fn lookup(&self, t: f64) -> Result<Setpoint> {
        Ok(self.segments[self.segment_index(t)?].setpoint)
    }
}
