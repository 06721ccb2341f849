//! Nonholonomic dynamics of a pendulum-actuated spherical robot.
//!
//! The robot is a rolling spherical hull, an internal yoke whose x-axis stays
//! parallel to the ground, and a pendulum hung from the hull centre on the
//! yoke. Configuration is `(X, Z, phi, theta, psi, beta)`: ground position of
//! the hull centre, YXZ Euler angles (heading, lateral tilt, forward spin) and
//! the pendulum angle relative to the yoke.
//!
//! Equations of motion are assembled from body Jacobians and solved together
//! with the rolling-without-slipping constraints as a saddle-point system at
//! every derivative evaluation. On top of that sit the pendulum and speed
//! controllers, an adaptive Runge-Kutta integrator with constraint projection,
//! wobble/precession analysis and the command line front end.

pub mod analysis;
pub mod cli;
pub mod control;
pub mod dynamics;
pub mod error;
pub mod integrator;
pub mod kinematics;
pub mod params;
pub mod scenario;

pub use error::{Error, Result};
pub use params::{InertiaSet, Model, RobotParams};
