use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical parameters of the robot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotParams {
    /// Hull mass, kg.
    pub m_hull: f64,
    /// Yoke mass, kg.
    pub m_yoke: f64,
    /// Pendulum mass, kg.
    pub m_pendulum: f64,
    /// Sphere radius, m.
    pub r_sphere: f64,
    /// Distance from the hull centre to the pendulum centre of mass, m.
    pub r_pendulum: f64,
    /// Gravitational acceleration, m/s^2.
    pub gravity: f64,
}

impl RobotParams {
    /// Reference desk-scale parameter set used by tests and bundled scenarios.
    pub const REFERENCE: RobotParams = RobotParams {
        m_hull: 1.5,
        m_yoke: 1.0,
        m_pendulum: 0.5,
        r_sphere: 0.15,
        r_pendulum: 0.10,
        gravity: 9.81,
    };

    pub fn total_mass(&self) -> f64 {
        self.m_hull + self.m_yoke + self.m_pendulum
    }

    /// Checks physical admissibility. A massless or zero-arm pendulum leaves
    /// the `beta` row of the mass matrix empty, so it is only accepted when
    /// `beta` is frozen.
    pub fn validate(&self, beta_frozen: bool) -> Result<()> {
        let positive = [
            ("m_hull", self.m_hull),
            ("m_yoke", self.m_yoke),
            ("r_sphere", self.r_sphere),
            ("gravity", self.gravity),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be finite and > 0, got {value}"),
                });
            }
        }
        for (name, value) in [("m_pendulum", self.m_pendulum), ("r_pendulum", self.r_pendulum)] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be finite and >= 0, got {value}"),
                });
            }
        }
        if self.r_pendulum >= self.r_sphere {
            return Err(Error::InvalidParameter {
                name: "r_pendulum",
                reason: format!(
                    "pendulum arm {} m must be shorter than the sphere radius {} m",
                    self.r_pendulum, self.r_sphere
                ),
            });
        }
        if !beta_frozen && self.m_pendulum * self.r_pendulum * self.r_pendulum <= 0.0 {
            let name = if self.m_pendulum <= 0.0 { "m_pendulum" } else { "r_pendulum" };
            return Err(Error::InvalidParameter {
                name,
                reason: "m_pendulum * r_pendulum^2 = 0 makes the beta dynamics singular; \
                         freeze beta or give the pendulum mass and arm length"
                    .to_string(),
            });
        }
        Ok(())
    }

    pub fn inertia(&self) -> InertiaSet {
        InertiaSet::from_params(self)
    }
}

impl Default for RobotParams {
    fn default() -> Self {
        Self::REFERENCE
    }
}

/// Body-frame inertia tensors of hull, yoke and pendulum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InertiaSet {
    pub hull: Matrix3<f64>,
    pub yoke: Matrix3<f64>,
    pub pendulum: Matrix3<f64>,
}

impl InertiaSet {
    pub fn from_params(p: &RobotParams) -> Self {
        let rs2 = p.r_sphere * p.r_sphere;
        let rp2 = p.r_pendulum * p.r_pendulum;
        let hull = 2.0 / 3.0 * p.m_hull * rs2;
        let yoke = 0.25 * p.m_yoke * rs2;
        let pend = p.m_pendulum * rp2 / 3.0;
        Self {
            hull: Matrix3::from_diagonal_element(hull),
            yoke: Matrix3::from_diagonal(&[yoke, 2.0 * yoke, yoke].into()),
            // The pendulum is a thin rod along its own y-axis.
            pendulum: Matrix3::from_diagonal(&[pend, 0.0, pend].into()),
        }
    }
}

/// Validated parameters plus the modelling options the equations of motion need.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Model {
    pub params: RobotParams,
    pub inertia: InertiaSet,
    /// Hold `beta` fixed with an extra holonomic constraint row.
    pub beta_frozen: bool,
}

impl Model {
    pub fn new(params: RobotParams) -> Result<Self> {
        Self::with_options(params, false)
    }

    pub fn with_options(params: RobotParams, beta_frozen: bool) -> Result<Self> {
        params.validate(beta_frozen)?;
        Ok(Self {
            params,
            inertia: params.inertia(),
            beta_frozen,
        })
    }

    pub fn reference() -> Self {
        Self::new(RobotParams::REFERENCE).expect("reference parameters are valid")
    }
}
