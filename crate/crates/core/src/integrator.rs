//! Adaptive Dormand-Prince 5(4) integration of the closed-loop robot.
//!
//! Steps are clipped so that every sample time and every schedule breakpoint
//! is hit exactly; at breakpoints the step size is reset so a setpoint jump
//! never falls inside a step. The work done by both motors is integrated
//! alongside the state, which gives an energy-balance residual at every
//! sample without a separate quadrature.

use serde::{Deserialize, Serialize};

use crate::control::{ControllerSet, SetpointSchedule};
use crate::dynamics::{self, constraint_residual, rolling_velocity, StateVector};
use crate::error::{Error, Result};
use crate::kinematics::check_gimbal;
use crate::params::{Model, RobotParams};

/// Smallest step the integrator will take before reporting stiffness.
pub const MIN_STEP: f64 = 1e-12;

/// Largest constraint violation accepted for an initial state.
pub const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub rtol: f64,
    pub atol: f64,
    /// s
    pub h_init: f64,
    /// s
    pub h_max: f64,
    /// s
    pub sample_dt: f64,
    pub projection_enabled: bool,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol: 1e-10,
            h_init: 1e-4,
            h_max: 1e-2,
            sample_dt: 1e-2,
            projection_enabled: true,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Integrator(msg));
        if !(self.rtol > 0.0 && self.atol > 0.0) || !self.rtol.is_finite() || !self.atol.is_finite() {
            return bad(format!("tolerances must be > 0 (rtol = {}, atol = {})", self.rtol, self.atol));
        }
        if !(self.h_init > 0.0 && self.h_init <= self.h_max) || !self.h_max.is_finite() {
            return bad(format!("need 0 < h_init <= h_max (h_init = {}, h_max = {})", self.h_init, self.h_max));
        }
        if !(self.sample_dt > 0.0) || !self.sample_dt.is_finite() {
            return bad(format!("sample_dt must be > 0, got {}", self.sample_dt));
        }
        Ok(())
    }
}

// Dormand-Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
// B5 - B4
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const PI_BETA: f64 = 0.04;
const PI_ALPHA: f64 = 0.2 - 0.75 * PI_BETA;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult<const N: usize> {
    pub x_next: [f64; N],
    /// Scaled error norm; the step is acceptable when `err <= 1`.
    pub err: f64,
    pub h_next: f64,
    pub accepted: bool,
}

/// Embedded RK 5(4) stepper with proportional-integral step control.
#[derive(Debug, Clone)]
pub struct Dopri5 {
    pub rtol: f64,
    pub atol: f64,
    pub h_max: f64,
    err_prev: f64,
    /// Why the latest trial step was abandoned before its error estimate.
    stage_failure: Option<Error>,
    rejected: usize,
}

impl Dopri5 {
    pub fn new(rtol: f64, atol: f64, h_max: f64) -> Self {
        Self { rtol, atol, h_max, err_prev: 1e-4, stage_failure: None, rejected: 0 }
    }

    /// Number of rejected trial steps so far.
    pub fn rejected_steps(&self) -> usize {
        self.rejected
    }

    /// Forgets step-control history, e.g. after a discontinuity.
    pub fn reset(&mut self) {
        self.err_prev = 1e-4;
    }

    pub fn step<const N: usize, F>(&mut self, f: &mut F, t: f64, x: &[f64; N], h: f64) -> Result<StepResult<N>>
    where
        F: FnMut(f64, &[f64; N]) -> Result<[f64; N]>,
    {
        debug_assert!(h > 0.0);
        let mut k = [[0.0; N]; 7];
        k[0] = f(t, x)?;
        for s in 1..7 {
            let mut xs = *x;
            for (i, xi) in xs.iter_mut().enumerate() {
                let incr: f64 = (0..s).map(|j| A[s][j] * k[j][i]).sum();
                *xi += h * incr;
            }
            k[s] = match f(t + C[s] * h, &xs) {
                Ok(v) => v,
                // A trial stage outside the admissible region only says the
                // step is too long.
                Err(e @ (Error::GimbalGuard { .. } | Error::NonFinite { .. } | Error::SingularSaddle { .. })) => {
                    self.stage_failure = Some(e);
                    return Ok(StepResult { x_next: *x, err: f64::INFINITY, h_next: h * FAC_MIN, accepted: false });
                }
                Err(e) => return Err(e),
            };
        }
        let mut x_next = *x;
        let mut sum_sq = 0.0;
        for i in 0..N {
            let incr: f64 = (0..7).map(|s| B5[s] * k[s][i]).sum();
            x_next[i] += h * incr;
            let err_i: f64 = h * (0..7).map(|s| E[s] * k[s][i]).sum::<f64>();
            let scale = self.atol + self.rtol * x[i].abs().max(x_next[i].abs());
            sum_sq += (err_i / scale).powi(2);
        }
        let err = if N == 0 { 0.0 } else { (sum_sq / N as f64).sqrt() };
        if !err.is_finite() {
            return Ok(StepResult { x_next, err, h_next: h * FAC_MIN, accepted: false });
        }
        let accepted = err <= 1.0;
        let fac = if accepted {
            let fac = if err == 0.0 {
                FAC_MAX
            } else {
                SAFETY * err.powf(-PI_ALPHA) * self.err_prev.powf(PI_BETA)
            };
            self.err_prev = err.max(1e-4);
            fac.clamp(FAC_MIN, FAC_MAX)
        } else {
            (SAFETY * err.powf(-0.2)).clamp(FAC_MIN, 1.0)
        };
        Ok(StepResult {
            x_next,
            err,
            h_next: (h * fac).min(self.h_max),
            accepted,
        })
    }

    /// Integrates from `t` to exactly `t_target`. `h` carries the proposed
    /// step size in and out.
    pub fn advance<const N: usize, F, P>(
        &mut self,
        f: &mut F,
        t: &mut f64,
        x: &mut [f64; N],
        t_target: f64,
        h: &mut f64,
        mut on_accept: P,
    ) -> Result<()>
    where
        F: FnMut(f64, &[f64; N]) -> Result<[f64; N]>,
        P: FnMut(&mut [f64; N]) -> Result<()>,
    {
        while *t < t_target {
            let remaining = t_target - *t;
            let clipped = h.min(self.h_max) >= remaining;
            let step = if clipped { remaining } else { h.min(self.h_max) };
            let res = self.step(f, *t, x, step)?;
            if res.accepted {
                self.stage_failure = None;
                *t = if clipped { t_target } else { *t + step };
                *x = res.x_next;
                on_accept(x)?;
                // A clipped step says nothing about the natural step size.
                *h = if clipped { res.h_next.max(*h) } else { res.h_next };
            } else {
                self.rejected += 1;
                *h = res.h_next;
            }
            if *h < MIN_STEP && *t < t_target {
                let cause = self.stage_failure.take().map(Box::new);
                return Err(Error::StepUnderflow { t: *t, h: *h, cause });
            }
        }
        Ok(())
    }
}

/// Replaces `(Xd, Zd)` by the rolling velocities implied by the angular state.
pub fn project_velocities(x: &StateVector, p: &RobotParams) -> StateVector {
    let (xd, zd) = rolling_velocity(x, p);
    let mut out = *x;
    out[StateVector::XD] = xd;
    out[StateVector::ZD] = zd;
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub state: StateVector,
    pub t_s: f64,
    pub t_p: f64,
    pub kinetic: f64,
    pub potential: f64,
    /// `E(t) - E(0) - W(t)`, J, where `W` is the accumulated motor work.
    pub energy_residual: f64,
    pub r_x: f64,
    pub r_z: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IntegrationStats {
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub evaluations: usize,
    /// Largest `|M qdd + b - Q - A^T lambda|` over all evaluations.
    pub max_dynamics_residual: f64,
    /// Largest `|A qdd + Adot qd|` over all evaluations.
    pub max_constraint_residual: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub stats: IntegrationStats,
}

impl Trajectory {
    pub fn max_energy_residual(&self) -> f64 {
        self.samples.iter().map(|s| s.energy_residual.abs()).fold(0.0, f64::max)
    }

    pub fn max_constraint_residual(&self) -> f64 {
        self.samples
            .iter()
            .map(|s| s.r_x.abs().max(s.r_z.abs()))
            .fold(0.0, f64::max)
    }

    pub fn final_state(&self) -> Option<&StateVector> {
        self.samples.last().map(|s| &s.state)
    }
}

const N_AUG: usize = 13;
const WORK: usize = 12;

fn augment(x: &StateVector, work: f64) -> [f64; N_AUG] {
    let mut y = [0.0; N_AUG];
    y[..12].copy_from_slice(x.0.as_slice());
    y[WORK] = work;
    y
}

fn strip(y: &[f64; N_AUG]) -> StateVector {
    StateVector::from_slice(&y[..12])
}

/// Number of uniform samples for a run of length `t_end`.
pub fn sample_count(t_end: f64, sample_dt: f64) -> usize {
    (t_end / sample_dt + 1e-9).floor() as usize + 1
}

/// Runs the closed-loop simulation from `x0` to `t_end`.
pub fn integrate(
    model: &Model,
    schedule: &SetpointSchedule,
    controllers: &ControllerSet,
    x0: &StateVector,
    t_end: f64,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    controllers.validate()?;
    model.params.validate(model.beta_frozen)?;
    if !(t_end >= 0.0) || !t_end.is_finite() {
        return Err(Error::Integrator(format!("t_end must be >= 0, got {t_end}")));
    }
    let p = model.params;
    if !x0.is_finite() {
        return Err(Error::NonFinite { t: 0.0 });
    }
    check_gimbal(x0[StateVector::THETA])?;
    let x0 = if cfg.projection_enabled { project_velocities(x0, &p) } else { *x0 };
    let (r_x, r_z) = constraint_residual(&x0, &p);
    let r0 = r_x.abs().max(r_z.abs());
    if r0 > FEASIBILITY_TOL {
        return Err(Error::InfeasibleInitialState { residual: r0 });
    }

    let n_samples = sample_count(t_end, cfg.sample_dt);
    let sample_time = |i: usize| i as f64 * cfg.sample_dt;

    // Event times: samples plus interior breakpoints.
    let mut events: Vec<(f64, bool)> = (1..n_samples).map(|i| (sample_time(i), false)).collect();
    let last_sample = sample_time(n_samples - 1);
    for bp in schedule.breakpoints().filter(|&b| b < last_sample) {
        match events.iter_mut().find(|(t, _)| *t == bp) {
            Some(ev) => ev.1 = true,
            None => events.push((bp, true)),
        }
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0));

    let e0 = dynamics::total_energy(&p, &x0)?;
    let mut stats = IntegrationStats::default();
    let mut samples = Vec::with_capacity(n_samples);

    let record = |t: f64, y: &[f64; N_AUG]| -> Result<Sample> {
        let x = strip(y);
        let sp = schedule.lookup(t)?;
        let (t_s, t_p) = controllers.torques(&x, sp, &p);
        let (q, qd) = x.to_parts();
        let kinetic = dynamics::kinetic_energy(&p, &q, &qd)?;
        let potential = dynamics::potential_energy(&p, &q);
        let (r_x, r_z) = constraint_residual(&x, &p);
        Ok(Sample {
            t,
            state: x,
            t_s,
            t_p,
            kinetic,
            potential,
            energy_residual: kinetic + potential - e0 - y[WORK],
            r_x,
            r_z,
        })
    };

    let mut y = augment(&x0, 0.0);
    let mut t = 0.0;
    samples.push(record(t, &y)?);

    let mut stepper = Dopri5::new(cfg.rtol, cfg.atol, cfg.h_max);
    let mut h = cfg.h_init;
    let mut segment = schedule.segment_index(0.0)?;

    for (t_target, is_breakpoint) in events {
        let setpoint = schedule.segments()[segment].setpoint;
        let stats_ref = &mut stats;
        let mut rhs = |_t: f64, y: &[f64; N_AUG]| -> Result<[f64; N_AUG]> {
            let x = strip(y);
            check_gimbal(x[StateVector::THETA])?;
            let (t_s, t_p) = controllers.torques(&x, setpoint, &p);
            let (dx, sol) = dynamics::state_derivative(model, &x, t_s, t_p)?;
            stats_ref.evaluations += 1;
            stats_ref.max_dynamics_residual = stats_ref.max_dynamics_residual.max(sol.dynamics_residual);
            stats_ref.max_constraint_residual = stats_ref.max_constraint_residual.max(sol.constraint_residual);
            let mut dy = augment(&dx, 0.0);
            dy[WORK] = t_s * x[StateVector::PSID] + t_p * x[StateVector::BETAD];
            Ok(dy)
        };
        let mut accepted = 0usize;
        let before_t = t;
        stepper
            .advance(&mut rhs, &mut t, &mut y, t_target, &mut h, |y| {
                accepted += 1;
                if y.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite { t: before_t });
                }
                check_gimbal(y[StateVector::THETA])?;
                if cfg.projection_enabled {
                    let x = project_velocities(&strip(y), &p);
                    y[StateVector::XD] = x[StateVector::XD];
                    y[StateVector::ZD] = x[StateVector::ZD];
                }
                Ok(())
            })
            .map_err(|e| match e {
                Error::NonFinite { .. } => Error::NonFinite { t },
                other => other,
            })?;
        stats.accepted_steps += accepted;

        if samples.len() < n_samples && t == sample_time(samples.len()) {
            samples.push(record(t, &y)?);
        }
        if is_breakpoint {
            segment = schedule.segment_index(t)?;
            stepper.reset();
            h = cfg.h_init;
        }
    }
    stats.rejected_steps = stepper.rejected_steps();

    Ok(Trajectory { samples, stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn run_scalar<F: FnMut(f64, &[f64; 1]) -> Result<[f64; 1]>>(mut f: F, x0: f64, t_end: f64, tol: f64) -> f64 {
        let mut st = Dopri5::new(tol, tol, 1.0);
        let (mut t, mut x, mut h) = (0.0, [x0], 1e-3);
        st.advance(&mut f, &mut t, &mut x, t_end, &mut h, |_| Ok(())).unwrap();
        assert_eq!(t, t_end);
        x[0]
    }

    #[test]
    fn zero_derivative_is_exact() {
        let mut st = Dopri5::new(1e-8, 1e-10, 1.0);
        let mut f = |_t: f64, _x: &[f64; 3]| Ok([0.0; 3]);
        let r = st.step(&mut f, 0.0, &[1.0, -2.0, 3.0], 0.7).unwrap();
        assert!(r.accepted);
        assert_eq!(r.x_next, [1.0, -2.0, 3.0]);
        assert_eq!(r.err, 0.0);
    }

    #[test]
    fn exponential_decay() {
        let x = run_scalar(|_, x| Ok([-x[0]]), 1.0, 1.0, 1e-8);
        assert_relative_eq!(x, (-1.0f64).exp(), max_relative = 1e-8);
    }

    #[test]
    fn harmonic_oscillator_energy_drift() {
        let omega = 2.0 * std::f64::consts::PI;
        let tol = 1e-10;
        let mut st = Dopri5::new(tol, tol, 0.1);
        let mut f = |_t: f64, x: &[f64; 2]| Ok([x[1], -omega * omega * x[0]]);
        let (mut t, mut x, mut h) = (0.0, [1.0, 0.0], 1e-3);
        let energy = |x: &[f64; 2]| 0.5 * (x[1] * x[1] + omega * omega * x[0] * x[0]);
        let e0 = energy(&x);
        let mut worst = 0.0f64;
        for period in 1..=1000 {
            st.advance(&mut f, &mut t, &mut x, period as f64, &mut h, |_| Ok(())).unwrap();
            worst = worst.max(((energy(&x) - e0) / e0).abs());
        }
        // Local errors of ~tol accumulate roughly linearly over ~1e5 steps.
        assert!(worst < 1e-4, "relative energy drift {worst}");
        assert!((x[0] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn tighter_tolerance_reduces_error() {
        // x' = -x - tan(t) x has x = exp(-t) cos(t).
        let f = |t: f64, x: &[f64; 1]| Ok([-x[0] - t.tan() * x[0]]);
        let exact = (-1.0f64).exp() * 1.0f64.cos();
        let e1 = (run_scalar(f, 1.0, 1.0, 1e-6) - exact).abs();
        let e2 = (run_scalar(f, 1.0, 1.0, 1e-9) - exact).abs();
        assert!(e2 < e1, "{e2} !< {e1}");
    }

    #[test]
    fn stiff_problem_underflows() {
        let mut st = Dopri5::new(1e-2, 1e-2, 1.0);
        let mut f = |_t: f64, x: &[f64; 1]| Ok([-1e15 * (x[0] - 1.0)]);
        let (mut t, mut x, mut h) = (0.0, [0.0], 1e-3);
        let err = st.advance(&mut f, &mut t, &mut x, 1.0, &mut h, |_| Ok(())).unwrap_err();
        assert!(matches!(err, Error::StepUnderflow { .. }));
    }

    #[test]
    fn projection() {
        let p = RobotParams::REFERENCE;
        let mut x = StateVector::default();
        x[StateVector::PSID] = 1.0;
        x[StateVector::THETAD] = 0.2;
        x[StateVector::PHI] = 0.4;
        x[StateVector::THETA] = 0.1;
        let feasible = project_velocities(&x, &p);
        assert_eq!(project_velocities(&feasible, &p), feasible);
        assert_eq!(constraint_residual(&feasible, &p), (0.0, 0.0));

        let mut perturbed = feasible;
        perturbed[StateVector::XD] += 1e-3;
        assert_relative_eq!(constraint_residual(&perturbed, &p).0, 1e-3, epsilon = 1e-12);
        let fixed = project_velocities(&perturbed, &p);
        assert_eq!(fixed, feasible);
    }

    #[test]
    fn config_validation() {
        assert!(IntegratorConfig::default().validate().is_ok());
        let bad = IntegratorConfig { h_init: 1.0, h_max: 0.1, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = IntegratorConfig { rtol: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = IntegratorConfig { sample_dt: -1.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn sample_counts() {
        assert_eq!(sample_count(30.0, 0.01), 3001);
        assert_eq!(sample_count(10.0, 0.01), 1001);
        assert_eq!(sample_count(0.0, 0.01), 1);
    }

    #[test]
    fn equilibrium_stays_put() {
        let model = Model::reference();
        let traj = integrate(
            &model,
            &SetpointSchedule::constant(0.0, 0.0),
            &ControllerSet::default(),
            &StateVector::default(),
            1.0,
            &IntegratorConfig::default(),
        )
        .unwrap();
        assert_eq!(traj.samples.len(), 101);
        for s in &traj.samples {
            assert_eq!(s.state, StateVector::default());
        }
    }

    #[test]
    fn infeasible_start_without_projection() {
        let model = Model::reference();
        let mut x0 = StateVector::default();
        x0[StateVector::PSID] = 1.0;
        let cfg = IntegratorConfig { projection_enabled: false, ..Default::default() };
        let err = integrate(&model, &SetpointSchedule::constant(0.0, 1.0), &ControllerSet::default(), &x0, 0.1, &cfg)
            .unwrap_err();
        assert!(matches!(err, Error::InfeasibleInitialState { .. }));
    }
}
