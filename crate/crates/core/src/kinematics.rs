//! Frame chain and body velocities.
//!
//! The global frame has Y vertical and X-Z as the ground plane. Body frames
//! are reached through YXZ Euler angles:
//!
//! ```text
//! G --Ry(phi)--> I --Rx(theta)--> Y --Rx(beta)--> P
//!                                 Y --Rz(psi)---> H
//! ```
//!
//! All rotations are right-handed; `R_GB` maps body-frame vectors to the
//! global frame.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::params::RobotParams;

pub type Mat3 = Matrix3<f64>;
pub type Vec3 = Vector3<f64>;

/// Largest admissible `|theta|`. Beyond this the YXZ chain is too close to
/// gimbal lock for the equations of motion to be trusted.
pub const GIMBAL_LIMIT: f64 = std::f64::consts::FRAC_PI_2 - 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

/// Euler angles and their rates. Angles are kept unwrapped.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EulerState {
    /// Heading (precession) about global Y, rad.
    pub phi: f64,
    /// Lateral tilt (wobble) about the yoke x-axis, rad.
    pub theta: f64,
    /// Forward spin about the yoke z-axis, rad.
    pub psi: f64,
    /// Pendulum angle relative to the yoke, rad.
    pub beta: f64,
    pub phid: f64,
    pub thetad: f64,
    pub psid: f64,
    pub betad: f64,
}

impl EulerState {
    /// Advances every angle linearly by its rate over `dt`.
    pub fn drift(&self, dt: f64) -> Self {
        Self {
            phi: self.phi + self.phid * dt,
            theta: self.theta + self.thetad * dt,
            psi: self.psi + self.psid * dt,
            beta: self.beta + self.betad * dt,
            ..*self
        }
    }

    /// Pendulum angle measured from the vertical.
    pub fn pendulum_tilt(&self) -> f64 {
        self.theta + self.beta
    }
}

pub fn check_gimbal(theta: f64) -> Result<()> {
    if theta.abs() >= GIMBAL_LIMIT || !theta.is_finite() {
        Err(Error::GimbalGuard { theta })
    } else {
        Ok(())
    }
}

pub fn rot_axis(axis: Axis, alpha: f64) -> Mat3 {
    let (s, c) = alpha.sin_cos();
    match axis {
        Axis::X => Mat3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c),
        Axis::Y => Mat3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c),
        Axis::Z => Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0),
    }
}

/// Orientations of yoke, pendulum and hull relative to the ground.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameRotations {
    pub yoke: Mat3,
    pub pendulum: Mat3,
    pub hull: Mat3,
}

pub fn frame_rotations(e: &EulerState) -> FrameRotations {
    let yoke = rot_axis(Axis::Y, e.phi) * rot_axis(Axis::X, e.theta);
    FrameRotations {
        yoke,
        pendulum: yoke * rot_axis(Axis::X, e.beta),
        hull: yoke * rot_axis(Axis::Z, e.psi),
    }
}

/// Yoke angular velocity in the yoke frame.
pub fn omega_yoke(e: &EulerState) -> Vec3 {
    let (s, c) = e.theta.sin_cos();
    Vec3::new(e.thetad, e.phid * c, -e.phid * s)
}

/// Pendulum angular velocity in the pendulum frame.
pub fn omega_pendulum(e: &EulerState) -> Vec3 {
    let (s, c) = (e.theta + e.beta).sin_cos();
    Vec3::new(e.betad + e.thetad, e.phid * c, -e.phid * s)
}

/// Hull angular velocity in the hull frame.
pub fn omega_hull(e: &EulerState) -> Vec3 {
    let (st, ct) = e.theta.sin_cos();
    let (sp, cp) = e.psi.sin_cos();
    Vec3::new(
        e.thetad * cp + e.phid * ct * sp,
        e.phid * cp * ct - e.thetad * sp,
        e.psid - e.phid * st,
    )
}

/// Position and velocity of the pendulum centre of mass in the global frame,
/// given the ground position `(x, z)` of the hull centre and its rates.
pub fn pendulum_com_state(
    e: &EulerState,
    x: f64,
    z: f64,
    xd: f64,
    zd: f64,
    p: &RobotParams,
) -> (Vec3, Vec3) {
    let r_gp = frame_rotations(e).pendulum;
    let arm = r_gp * Vec3::new(0.0, -p.r_pendulum, 0.0);
    let omega_global = r_gp * omega_pendulum(e);
    let r = Vec3::new(x, p.r_sphere, z) + arm;
    let v = Vec3::new(xd, 0.0, zd) + omega_global.cross(&arm);
    (r, v)
}

/// Inverse of the hat map for a (nearly) skew-symmetric matrix.
pub fn vee(m: &Mat3) -> Vec3 {
    Vec3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}
