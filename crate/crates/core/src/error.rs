use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Failures of the dynamics model and the simulation loop.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("gimbal guard violated: |theta| = {theta:.6} rad reaches the pi/2 - 1e-3 limit")]
    GimbalGuard { theta: f64 },

    #[error("singular saddle-point matrix (condition estimate {condition:.3e})")]
    SingularSaddle { condition: f64 },

    #[error("step size underflow at t = {t:.9} s (h = {h:.3e} s): problem too stiff for the explicit integrator{}",
        cause.as_ref().map(|c| format!(" (last trial step failed: {c})")).unwrap_or_default())]
    StepUnderflow { t: f64, h: f64, cause: Option<Box<Error>> },

    #[error("non-finite state at t = {t:.9} s")]
    NonFinite { t: f64 },

    #[error("invalid setpoint schedule: {0}")]
    Schedule(String),

    #[error("invalid integrator configuration: {0}")]
    Integrator(String),

    #[error("initial state violates the rolling constraint (|r| = {residual:.3e} m/s)")]
    InfeasibleInitialState { residual: f64 },
}
