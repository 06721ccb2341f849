//! Energies, mass matrix, bias forces, rolling constraints and the
//! constrained equations of motion.
//!
//! Generalized coordinates are ordered `q = (X, Z, phi, theta, psi, beta)`.
//! The simulation state uses a different ordering, see [`StateVector`].
//!
//! The mass matrix and bias vector are assembled from the linear and angular
//! velocity Jacobians of the three bodies:
//!
//! ```text
//! M = sum_B  m_B Jv_B^T Jv_B + Jw_B^T I_B Jw_B
//! b = sum_B  m_B Jv_B^T (dJv_B qd) + Jw_B^T (I_B (dJw_B qd) + w_B x I_B w_B) + dV/dq
//! ```
//!
//! with angular Jacobians taken in body frames, so that
//! `d/dt(dL/dqd) - dL/dq = M qdd + b`. The rolling constraint `A qd = 0`
//! enters through multipliers and the whole system is solved as one
//! saddle-point problem per evaluation.

use nalgebra::{DMatrix, DVector, Matrix2x6, Matrix3x6, Matrix6, SVector, Vector2, Vector3, Vector6};

use crate::error::{Error, Result};
use crate::kinematics::{
    self, check_gimbal, omega_hull, omega_pendulum, omega_yoke, pendulum_com_state, EulerState,
};
use crate::params::{Model, RobotParams};

pub const IX: usize = 0;
pub const IZ: usize = 1;
pub const IPHI: usize = 2;
pub const ITHETA: usize = 3;
pub const IPSI: usize = 4;
pub const IBETA: usize = 5;

/// Generalized coordinates `(X, Z, phi, theta, psi, beta)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GenCoords(pub Vector6<f64>);

/// Generalized velocities, same ordering as [`GenCoords`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GenVel(pub Vector6<f64>);

impl GenCoords {
    pub fn new(x: f64, z: f64, phi: f64, theta: f64, psi: f64, beta: f64) -> Self {
        Self(Vector6::new(x, z, phi, theta, psi, beta))
    }
    pub fn x(&self) -> f64 {
        self.0[IX]
    }
    pub fn z(&self) -> f64 {
        self.0[IZ]
    }
    pub fn phi(&self) -> f64 {
        self.0[IPHI]
    }
    pub fn theta(&self) -> f64 {
        self.0[ITHETA]
    }
    pub fn psi(&self) -> f64 {
        self.0[IPSI]
    }
    pub fn beta(&self) -> f64 {
        self.0[IBETA]
    }
}

impl GenVel {
    pub fn new(xd: f64, zd: f64, phid: f64, thetad: f64, psid: f64, betad: f64) -> Self {
        Self(Vector6::new(xd, zd, phid, thetad, psid, betad))
    }
}

/// Builds the Euler-angle view of a configuration and its rates.
pub fn euler_of(q: &GenCoords, qd: &GenVel) -> EulerState {
    EulerState {
        phi: q.0[IPHI],
        theta: q.0[ITHETA],
        psi: q.0[IPSI],
        beta: q.0[IBETA],
        phid: qd.0[IPHI],
        thetad: qd.0[ITHETA],
        psid: qd.0[IPSI],
        betad: qd.0[IBETA],
    }
}

/// Twelve-entry simulation state, ordered
/// `(phi, theta, psi, X, Z, phid, thetad, psid, Xd, Zd, beta, betad)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StateVector(pub SVector<f64, 12>);

impl StateVector {
    pub const PHI: usize = 0;
    pub const THETA: usize = 1;
    pub const PSI: usize = 2;
    pub const X: usize = 3;
    pub const Z: usize = 4;
    pub const PHID: usize = 5;
    pub const THETAD: usize = 6;
    pub const PSID: usize = 7;
    pub const XD: usize = 8;
    pub const ZD: usize = 9;
    pub const BETA: usize = 10;
    pub const BETAD: usize = 11;

    /// Entry names, in storage order.
    pub const NAMES: [&'static str; 12] = [
        "phi", "theta", "psi", "X", "Z", "phid", "thetad", "psid", "Xd", "Zd", "beta", "betad",
    ];

    pub fn from_slice(values: &[f64]) -> Self {
        Self(SVector::from_column_slice(values))
    }

    pub fn from_parts(q: &GenCoords, qd: &GenVel) -> Self {
        let mut x = SVector::<f64, 12>::zeros();
        x[Self::PHI] = q.0[IPHI];
        x[Self::THETA] = q.0[ITHETA];
        x[Self::PSI] = q.0[IPSI];
        x[Self::X] = q.0[IX];
        x[Self::Z] = q.0[IZ];
        x[Self::BETA] = q.0[IBETA];
        x[Self::PHID] = qd.0[IPHI];
        x[Self::THETAD] = qd.0[ITHETA];
        x[Self::PSID] = qd.0[IPSI];
        x[Self::XD] = qd.0[IX];
        x[Self::ZD] = qd.0[IZ];
        x[Self::BETAD] = qd.0[IBETA];
        Self(x)
    }

    pub fn to_parts(&self) -> (GenCoords, GenVel) {
        let x = &self.0;
        (
            GenCoords::new(x[Self::X], x[Self::Z], x[Self::PHI], x[Self::THETA], x[Self::PSI], x[Self::BETA]),
            GenVel::new(
                x[Self::XD],
                x[Self::ZD],
                x[Self::PHID],
                x[Self::THETAD],
                x[Self::PSID],
                x[Self::BETAD],
            ),
        )
    }

    pub fn euler(&self) -> EulerState {
        let x = &self.0;
        EulerState {
            phi: x[Self::PHI],
            theta: x[Self::THETA],
            psi: x[Self::PSI],
            beta: x[Self::BETA],
            phid: x[Self::PHID],
            thetad: x[Self::THETAD],
            psid: x[Self::PSID],
            betad: x[Self::BETAD],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl std::ops::Index<usize> for StateVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl std::ops::IndexMut<usize> for StateVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

/// Pfaffian rows of the rolling constraint and their time derivative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintRows {
    pub a: Matrix2x6<f64>,
    pub adot: Matrix2x6<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EomSolution {
    pub qdd: Vector6<f64>,
    /// Rolling-constraint multipliers, N.
    pub lambda: Vector2<f64>,
    /// `|M qdd + b - Q - A^T lambda|` (including the frozen-beta row when present).
    pub dynamics_residual: f64,
    /// `|A qdd + Adot qd|`.
    pub constraint_residual: f64,
}

/// Kinetic energy summed body by body from centre-of-mass and angular velocities.
pub fn kinetic_energy(p: &RobotParams, q: &GenCoords, qd: &GenVel) -> Result<f64> {
    check_gimbal(q.theta())?;
    let e = euler_of(q, qd);
    let inertia = p.inertia();
    let v_centre = Vector3::new(qd.0[IX], 0.0, qd.0[IZ]);
    let (_, v_pend) = pendulum_com_state(&e, q.x(), q.z(), qd.0[IX], qd.0[IZ], p);
    let w_h = omega_hull(&e);
    let w_y = omega_yoke(&e);
    let w_p = omega_pendulum(&e);
    let translational = (p.m_hull + p.m_yoke) * v_centre.norm_squared() + p.m_pendulum * v_pend.norm_squared();
    let rotational = w_h.dot(&(inertia.hull * w_h)) + w_y.dot(&(inertia.yoke * w_y)) + w_p.dot(&(inertia.pendulum * w_p));
    Ok(0.5 * (translational + rotational))
}

/// Potential energy with the datum at the sphere centre.
pub fn potential_energy(p: &RobotParams, q: &GenCoords) -> f64 {
    let e = euler_of(q, &GenVel::default());
    let r_gp = kinematics::frame_rotations(&e).pendulum;
    let pendulum_height = (r_gp * Vector3::new(0.0, -p.r_pendulum, 0.0)).y;
    // The yoke centre of mass sits at the frame origin, so its term is zero.
    let yoke_height = 0.0;
    p.m_pendulum * p.gravity * pendulum_height + p.m_yoke * p.gravity * yoke_height
}

/// Velocity Jacobians of one body plus the velocity-product part of its
/// accelerations (`dJ/dt qd`).
struct BodyJacobian {
    jv: Matrix3x6<f64>,
    jv_bias: Vector3<f64>,
    jw: Matrix3x6<f64>,
    jw_bias: Vector3<f64>,
}

fn centre_linear_jacobian() -> Matrix3x6<f64> {
    let mut jv = Matrix3x6::zeros();
    jv[(0, IX)] = 1.0;
    jv[(2, IZ)] = 1.0;
    jv
}

fn hull_jacobian(e: &EulerState) -> BodyJacobian {
    let (st, ct) = e.theta.sin_cos();
    let (sp, cp) = e.psi.sin_cos();
    let (phid, thetad, psid) = (e.phid, e.thetad, e.psid);
    let mut jw = Matrix3x6::zeros();
    jw.set_column(IPHI, &Vector3::new(ct * sp, ct * cp, -st));
    jw.set_column(ITHETA, &Vector3::new(cp, -sp, 0.0));
    jw[(2, IPSI)] = 1.0;
    let jw_bias = Vector3::new(
        -thetad * psid * sp - phid * thetad * st * sp + phid * psid * ct * cp,
        -phid * psid * sp * ct - phid * thetad * cp * st - thetad * psid * cp,
        -phid * thetad * ct,
    );
    BodyJacobian {
        jv: centre_linear_jacobian(),
        jv_bias: Vector3::zeros(),
        jw,
        jw_bias,
    }
}

fn yoke_jacobian(e: &EulerState) -> BodyJacobian {
    let (st, ct) = e.theta.sin_cos();
    let mut jw = Matrix3x6::zeros();
    jw.set_column(IPHI, &Vector3::new(0.0, ct, -st));
    jw[(0, ITHETA)] = 1.0;
    let pt = e.phid * e.thetad;
    BodyJacobian {
        jv: centre_linear_jacobian(),
        jv_bias: Vector3::zeros(),
        jw,
        jw_bias: Vector3::new(0.0, -pt * st, -pt * ct),
    }
}

fn pendulum_jacobian(e: &EulerState, r_p: f64) -> BodyJacobian {
    let (sg, cg) = (e.theta + e.beta).sin_cos();
    let (sf, cf) = e.phi.sin_cos();
    let phid = e.phid;
    let gammad = e.thetad + e.betad;

    let mut jw = Matrix3x6::zeros();
    jw.set_column(IPHI, &Vector3::new(0.0, cg, -sg));
    jw[(0, ITHETA)] = 1.0;
    jw[(0, IBETA)] = 1.0;
    let pg = phid * gammad;

    // Pendulum centre: [X - Rp sf sg, Rs - Rp cg, Z - Rp cf sg].
    let mut jv = centre_linear_jacobian();
    jv.set_column(IPHI, &Vector3::new(-r_p * cf * sg, 0.0, r_p * sf * sg));
    let tilt_col = Vector3::new(-r_p * sf * cg, r_p * sg, -r_p * cf * cg);
    jv.set_column(ITHETA, &tilt_col);
    jv.set_column(IBETA, &tilt_col);
    let sq = phid * phid + gammad * gammad;
    let jv_bias = Vector3::new(
        -r_p * (2.0 * pg * cf * cg - sq * sf * sg),
        r_p * gammad * gammad * cg,
        r_p * (sq * cf * sg + 2.0 * pg * sf * cg),
    );
    BodyJacobian {
        jv,
        jv_bias,
        jw,
        jw_bias: Vector3::new(0.0, -pg * sg, -pg * cg),
    }
}

fn body_jacobians(p: &RobotParams, e: &EulerState) -> [(f64, nalgebra::Matrix3<f64>, BodyJacobian); 3] {
    let inertia = p.inertia();
    [
        (p.m_hull, inertia.hull, hull_jacobian(e)),
        (p.m_yoke, inertia.yoke, yoke_jacobian(e)),
        (p.m_pendulum, inertia.pendulum, pendulum_jacobian(e, p.r_pendulum)),
    ]
}

/// Gradient of the potential energy.
pub fn potential_gradient(p: &RobotParams, q: &GenCoords) -> Vector6<f64> {
    let torque = p.m_pendulum * p.gravity * p.r_pendulum * (q.theta() + q.beta()).sin();
    let mut g = Vector6::zeros();
    g[ITHETA] = torque;
    g[IBETA] = torque;
    g
}

pub fn mass_matrix(p: &RobotParams, q: &GenCoords) -> Result<Matrix6<f64>> {
    check_gimbal(q.theta())?;
    let e = euler_of(q, &GenVel::default());
    let mut m = Matrix6::zeros();
    for (mass, inertia, body) in body_jacobians(p, &e) {
        m += mass * body.jv.transpose() * body.jv + body.jw.transpose() * inertia * body.jw;
    }
    // Symmetrize away rounding asymmetry from the two products.
    Ok(0.5 * (m + m.transpose()))
}

/// Velocity-product and gravity terms: `d/dt(dL/dqd) - dL/dq - M qdd`.
pub fn bias_vector(p: &RobotParams, q: &GenCoords, qd: &GenVel) -> Result<Vector6<f64>> {
    check_gimbal(q.theta())?;
    let e = euler_of(q, qd);
    let mut b = potential_gradient(p, q);
    for (mass, inertia, body) in body_jacobians(p, &e) {
        let w = body.jw * qd.0;
        let gyro = w.cross(&(inertia * w));
        b += mass * body.jv.transpose() * body.jv_bias + body.jw.transpose() * (inertia * body.jw_bias + gyro);
    }
    Ok(b)
}

pub fn constraint_rows(q: &GenCoords, qd: &GenVel, p: &RobotParams) -> ConstraintRows {
    let rs = p.r_sphere;
    let (sf, cf) = q.phi().sin_cos();
    let (st, ct) = q.theta().sin_cos();
    let (phid, thetad) = (qd.0[IPHI], qd.0[ITHETA]);
    let a = Matrix2x6::new(
        1.0, 0.0, 0.0, -rs * sf, rs * cf * ct, 0.0, //
        0.0, 1.0, 0.0, -rs * cf, -rs * sf * ct, 0.0,
    );
    let adot = Matrix2x6::new(
        0.0, 0.0, 0.0, -rs * cf * phid, -rs * (sf * ct * phid + cf * st * thetad), 0.0, //
        0.0, 0.0, 0.0, rs * sf * phid, -rs * (cf * ct * phid - sf * st * thetad), 0.0,
    );
    ConstraintRows { a, adot }
}

/// Generalized force of the spin motor `t_s` (hull vs. yoke) and the
/// pendulum motor `t_p` (pendulum vs. yoke).
pub fn generalized_force(t_s: f64, t_p: f64) -> Vector6<f64> {
    let mut f = Vector6::zeros();
    f[IPSI] = t_s;
    f[IBETA] = t_p;
    f
}

/// Solves the saddle-point system
///
/// ```text
/// [ M  A^T ] [ qdd ]   [ Q - b        ]
/// [ A  0   ] [ -l  ] = [ -Adot qd     ]
/// ```
///
/// so that `M qdd + b = Q + A^T l` and `A qdd + Adot qd = 0`. With `beta`
/// frozen a third row `qdd_beta = 0` is appended.
pub fn solve_accelerations(model: &Model, q: &GenCoords, qd: &GenVel, force: &Vector6<f64>) -> Result<EomSolution> {
    let p = &model.params;
    let m = mass_matrix(p, q)?;
    let b = bias_vector(p, q, qd)?;
    let rows = constraint_rows(q, qd, p);
    let nc = if model.beta_frozen { 3 } else { 2 };
    let n = 6 + nc;

    let mut kkt = DMatrix::<f64>::zeros(n, n);
    let mut rhs = DVector::<f64>::zeros(n);
    kkt.view_mut((0, 0), (6, 6)).copy_from(&m);
    kkt.view_mut((6, 0), (2, 6)).copy_from(&rows.a);
    kkt.view_mut((0, 6), (6, 2)).copy_from(&rows.a.transpose());
    if model.beta_frozen {
        kkt[(8, IBETA)] = 1.0;
        kkt[(IBETA, 8)] = 1.0;
    }
    rhs.rows_mut(0, 6).copy_from(&(force - b));
    rhs.rows_mut(6, 2).copy_from(&(-(rows.adot * qd.0)));

    let lu = kkt.clone().lu();
    let diag = lu.u().diagonal().map(f64::abs);
    let (dmin, dmax) = (diag.min(), diag.max());
    if !(dmin > 1e-14 * dmax) {
        let sv = kkt.singular_values();
        return Err(Error::SingularSaddle {
            condition: sv.max() / sv.min(),
        });
    }
    let mut sol = lu.solve(&rhs).ok_or(Error::SingularSaddle { condition: f64::INFINITY })?;
    // One round of iterative refinement.
    let r = &rhs - &kkt * &sol;
    if let Some(delta) = lu.solve(&r) {
        sol += delta;
    }

    let qdd = Vector6::from_iterator(sol.rows(0, 6).iter().copied());
    let lambda = Vector2::new(-sol[6], -sol[7]);
    let mut dyn_res = m * qdd + b - force - rows.a.transpose() * lambda;
    if model.beta_frozen {
        dyn_res[IBETA] += sol[8];
    }
    let con_res = rows.a * qdd + rows.adot * qd.0;
    Ok(EomSolution {
        qdd,
        lambda,
        dynamics_residual: dyn_res.norm(),
        constraint_residual: con_res.norm(),
    })
}

/// Time derivative of the simulation state under motor torques `t_s`, `t_p`.
pub fn state_derivative(model: &Model, x: &StateVector, t_s: f64, t_p: f64) -> Result<(StateVector, EomSolution)> {
    if !x.is_finite() {
        return Err(Error::NonFinite { t: f64::NAN });
    }
    let (q, qd) = x.to_parts();
    let sol = solve_accelerations(model, &q, &qd, &generalized_force(t_s, t_p))?;
    let mut dx = StateVector::default();
    dx[StateVector::PHI] = x[StateVector::PHID];
    dx[StateVector::THETA] = x[StateVector::THETAD];
    dx[StateVector::PSI] = x[StateVector::PSID];
    dx[StateVector::X] = x[StateVector::XD];
    dx[StateVector::Z] = x[StateVector::ZD];
    dx[StateVector::BETA] = x[StateVector::BETAD];
    dx[StateVector::PHID] = sol.qdd[IPHI];
    dx[StateVector::THETAD] = sol.qdd[ITHETA];
    dx[StateVector::PSID] = sol.qdd[IPSI];
    dx[StateVector::XD] = sol.qdd[IX];
    dx[StateVector::ZD] = sol.qdd[IZ];
    dx[StateVector::BETAD] = sol.qdd[IBETA];
    Ok((dx, sol))
}

/// Rolling-constraint velocities implied by the angular state.
pub fn rolling_velocity(x: &StateVector, p: &RobotParams) -> (f64, f64) {
    let (sf, cf) = x[StateVector::PHI].sin_cos();
    let ct = x[StateVector::THETA].cos();
    let (thetad, psid) = (x[StateVector::THETAD], x[StateVector::PSID]);
    (
        p.r_sphere * (thetad * sf - psid * cf * ct),
        p.r_sphere * (thetad * cf + psid * sf * ct),
    )
}

/// Slip velocity of the contact point, `(r_x, r_z)` in m/s.
pub fn constraint_residual(x: &StateVector, p: &RobotParams) -> (f64, f64) {
    let (xd, zd) = rolling_velocity(x, p);
    (x[StateVector::XD] - xd, x[StateVector::ZD] - zd)
}

/// Total mechanical energy `K + V`.
pub fn total_energy(p: &RobotParams, x: &StateVector) -> Result<f64> {
    let (q, qd) = x.to_parts();
    Ok(kinetic_energy(p, &q, &qd)? + potential_energy(p, &q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    const P0: RobotParams = RobotParams::REFERENCE;

    fn random_q(rng: &mut StdRng) -> GenCoords {
        GenCoords::new(
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-3.0..3.0),
            rng.random_range(-1.2..1.2),
            rng.random_range(-6.0..6.0),
            rng.random_range(-1.0..1.0),
        )
    }

    fn random_v(rng: &mut StdRng) -> Vector6<f64> {
        Vector6::from_fn(|_, _| rng.random_range(-2.0..2.0))
    }

    fn unit(i: usize) -> Vector6<f64> {
        let mut v = Vector6::zeros();
        v[i] = 1.0;
        v
    }

    fn feasible_velocity(q: &GenCoords, thetad: f64, psid: f64, phid: f64, betad: f64) -> GenVel {
        let x = StateVector::from_parts(q, &GenVel::new(0.0, 0.0, phid, thetad, psid, betad));
        let (xd, zd) = rolling_velocity(&x, &P0);
        GenVel::new(xd, zd, phid, thetad, psid, betad)
    }

    #[test]
    fn kinetic_energy_examples() {
        let q = GenCoords::default();
        assert_eq!(kinetic_energy(&P0, &q, &GenVel::default()).unwrap(), 0.0);
        let k = kinetic_energy(&P0, &q, &GenVel(unit(IX))).unwrap();
        assert_relative_eq!(k, 1.5, epsilon = 1e-15);
        let k = kinetic_energy(&P0, &q, &GenVel(unit(IPSI))).unwrap();
        assert_relative_eq!(k, 0.01125, epsilon = 1e-15);
    }

    #[test]
    fn potential_energy_examples() {
        let v = potential_energy(&P0, &GenCoords::default());
        assert_relative_eq!(v, -0.4905, epsilon = 1e-15);
        let q = GenCoords::new(0.0, 0.0, 0.0, 0.5, 0.0, std::f64::consts::FRAC_PI_2 - 0.5);
        assert!(potential_energy(&P0, &q).abs() < 1e-15);
        let mut rng = StdRng::seed_from_u64(2);
        for _ in 0..20 {
            let q = random_q(&mut rng);
            let mirrored = GenCoords::new(q.x(), q.z(), q.phi(), -q.theta(), q.psi(), -q.beta());
            assert_relative_eq!(potential_energy(&P0, &q), potential_energy(&P0, &mirrored), epsilon = 1e-15);
        }
    }

    #[test]
    fn mass_matrix_matches_polarization_of_kinetic_energy() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..50 {
            let q = random_q(&mut rng);
            let m = mass_matrix(&P0, &q).unwrap();
            let k = |v: Vector6<f64>| kinetic_energy(&P0, &q, &GenVel(v)).unwrap();
            for i in 0..6 {
                for j in 0..6 {
                    let mij = k(unit(i) + unit(j)) - k(unit(i)) - k(unit(j));
                    let expected = if i == j { 2.0 * k(unit(i)) } else { mij };
                    assert!((m[(i, j)] - expected).abs() < 1e-12, "M[{i},{j}]");
                }
            }
            let v = random_v(&mut rng);
            assert_relative_eq!(0.5 * v.dot(&(m * v)), k(v), max_relative = 1e-12);
        }
    }

    #[test]
    fn mass_matrix_examples() {
        let m = mass_matrix(&P0, &GenCoords::default()).unwrap();
        assert_relative_eq!(m[(IX, IX)], 3.0, epsilon = 1e-15);
        assert_relative_eq!(m[(IPSI, IPSI)], 0.0225, epsilon = 1e-15);
        let m = mass_matrix(&P0, &GenCoords::new(0.0, 0.0, 1.0, 0.3, 2.0, -0.7)).unwrap();
        assert_relative_eq!(m[(IX, IX)], 3.0, epsilon = 1e-15);
    }

    #[test]
    fn mass_matrix_positive_definite() {
        let mut rng = StdRng::seed_from_u64(8);
        for _ in 0..100 {
            let q = random_q(&mut rng);
            let m = mass_matrix(&P0, &q).unwrap();
            assert!((m - m.transpose()).norm() <= 1e-12);
            let eig = m.symmetric_eigenvalues();
            assert!(eig.min() > 0.0, "eigenvalues {eig}");
        }
    }

    #[test]
    fn bias_examples() {
        let b = bias_vector(&P0, &GenCoords::default(), &GenVel::default()).unwrap();
        assert_eq!(b, Vector6::zeros());
        let q = GenCoords::new(0.3, -0.2, 0.4, 0.15, 0.8, 0.05);
        let b = bias_vector(&P0, &q, &GenVel::default()).unwrap();
        let g = P0.m_pendulum * P0.gravity * P0.r_pendulum * 0.2f64.sin();
        for i in 0..6 {
            let expected = if i == ITHETA || i == IBETA { g } else { 0.0 };
            assert!((b[i] - expected).abs() < 1e-15, "slot {i}: {}", b[i]);
        }
    }

    #[test]
    fn generalized_force_slots() {
        assert_eq!(generalized_force(0.0, 0.0), Vector6::zeros());
        assert_eq!(generalized_force(1.0, 0.0), Vector6::new(0.0, 0.0, 0.0, 0.0, 1.0, 0.0));
        assert_eq!(generalized_force(0.2, -0.1), Vector6::new(0.0, 0.0, 0.0, 0.0, 0.2, -0.1));
    }

    #[test]
    fn constraint_rows_examples() {
        let rows = constraint_rows(&GenCoords::default(), &GenVel::default(), &P0);
        let rs = P0.r_sphere;
        assert_eq!(rows.a.row(0).transpose(), Vector6::new(1.0, 0.0, 0.0, 0.0, rs, 0.0));
        assert_eq!(rows.a.row(1).transpose(), Vector6::new(0.0, 1.0, 0.0, -rs, 0.0, 0.0));
        for j in [IPHI, IBETA] {
            assert_eq!(rows.a.column(j).norm(), 0.0);
        }
    }

    #[test]
    fn constraint_rows_encode_rolling() {
        let mut rng = StdRng::seed_from_u64(9);
        for _ in 0..50 {
            let q = random_q(&mut rng);
            let v = random_v(&mut rng);
            let qd = feasible_velocity(&q, v[0], v[1], v[2], v[3]);
            let rows = constraint_rows(&q, &qd, &P0);
            assert!((rows.a * qd.0).norm() < 1e-14);
            let x = StateVector::from_parts(&q, &qd);
            let (rx, rz) = constraint_residual(&x, &P0);
            assert!(rx.abs() < 1e-15 && rz.abs() < 1e-15);
        }
    }

    #[test]
    fn constraint_rate_matches_finite_difference() {
        let mut rng = StdRng::seed_from_u64(10);
        let h = 1e-6;
        for _ in 0..50 {
            let q = random_q(&mut rng);
            let qd = GenVel(random_v(&mut rng));
            let rows = constraint_rows(&q, &qd, &P0);
            let ap = constraint_rows(&GenCoords(q.0 + qd.0 * h), &qd, &P0).a;
            let am = constraint_rows(&GenCoords(q.0 - qd.0 * h), &qd, &P0).a;
            assert!((rows.adot - (ap - am) / (2.0 * h)).norm() < 1e-7);
        }
    }

    #[test]
    fn constraint_residual_linearity() {
        let x = StateVector::from_parts(&GenCoords::default(), &GenVel::new(-P0.r_sphere, 0.0, 0.0, 0.0, 1.0, 0.0));
        assert_eq!(constraint_residual(&x, &P0), (0.0, 0.0));
        let mut y = x;
        y[StateVector::XD] += 1e-3;
        let (rx, rz) = constraint_residual(&y, &P0);
        assert_relative_eq!(rx, 1e-3, epsilon = 1e-15);
        assert_eq!(rz, 0.0);
    }

    #[test]
    fn state_vector_roundtrip() {
        let mut rng = StdRng::seed_from_u64(12);
        let q = random_q(&mut rng);
        let qd = GenVel(random_v(&mut rng));
        let (q2, qd2) = StateVector::from_parts(&q, &qd).to_parts();
        assert_eq!(q, q2);
        assert_eq!(qd, qd2);
    }

    #[test]
    fn equilibrium_is_at_rest() {
        let model = Model::reference();
        let sol = solve_accelerations(&model, &GenCoords::default(), &GenVel::default(), &Vector6::zeros()).unwrap();
        assert_eq!(sol.qdd, Vector6::zeros());
        assert_eq!(sol.lambda, Vector2::zeros());
    }

    #[test]
    fn spin_torque_on_hanging_pendulum_satisfies_both_residuals() {
        let model = Model::reference();
        let q = GenCoords::default();
        let qd = GenVel::default();
        let force = generalized_force(0.1, 0.0);
        let sol = solve_accelerations(&model, &q, &qd, &force).unwrap();
        let m = mass_matrix(&P0, &q).unwrap();
        let b = bias_vector(&P0, &q, &qd).unwrap();
        let rows = constraint_rows(&q, &qd, &P0);
        assert!((m * sol.qdd + b - force - rows.a.transpose() * sol.lambda).norm() < 1e-10);
        assert!((rows.a * sol.qdd + rows.adot * qd.0).norm() < 1e-10);
        assert!(sol.qdd[IPSI] > 0.0);
    }

    #[test]
    fn random_feasible_states_satisfy_acceleration_constraint() {
        let model = Model::reference();
        let mut rng = StdRng::seed_from_u64(13);
        for _ in 0..100 {
            let q = random_q(&mut rng);
            let v = random_v(&mut rng);
            let qd = feasible_velocity(&q, v[0], v[1], v[2], v[3]);
            let force = generalized_force(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let sol = solve_accelerations(&model, &q, &qd, &force).unwrap();
            assert!(sol.constraint_residual <= 1e-10);
            assert!(sol.dynamics_residual <= 1e-10);
        }
    }

    #[test]
    fn straight_roll_is_torque_free() {
        let model = Model::reference();
        let x = StateVector::from_parts(&GenCoords::default(), &GenVel::new(-P0.r_sphere, 0.0, 0.0, 0.0, 1.0, 0.0));
        let (dx, sol) = state_derivative(&model, &x, 0.0, 0.0).unwrap();
        assert_relative_eq!(dx[StateVector::X], -P0.r_sphere);
        for i in [StateVector::PHID, StateVector::THETAD, StateVector::PSID, StateVector::XD, StateVector::ZD, StateVector::BETAD] {
            assert!(dx[i].abs() < 1e-14, "entry {i} = {}", dx[i]);
        }
        assert!(sol.dynamics_residual < 1e-12);
    }

    #[test]
    fn frozen_beta_allows_massless_pendulum() {
        let p = RobotParams { m_pendulum: 0.0, ..P0 };
        let model = Model::with_options(p, true).unwrap();
        let q = GenCoords::new(0.0, 0.0, 0.0, 0.1, 0.0, 0.2);
        let qd = feasible_velocity(&q, 0.3, 1.0, 0.1, 0.0);
        let sol = solve_accelerations(&model, &q, &qd, &generalized_force(0.1, 0.5)).unwrap();
        assert_eq!(sol.qdd[IBETA], 0.0);
        assert!(sol.dynamics_residual < 1e-10);
        assert!(sol.constraint_residual < 1e-10);
    }

    #[test]
    fn singular_pendulum_is_reported() {
        let p = RobotParams { m_pendulum: 0.0, ..P0 };
        let model = Model { params: p, inertia: p.inertia(), beta_frozen: false };
        let err = solve_accelerations(&model, &GenCoords::default(), &GenVel::default(), &Vector6::zeros()).unwrap_err();
        assert!(matches!(err, Error::SingularSaddle { .. }));
    }

    #[test]
    fn gimbal_guard_is_enforced() {
        let q = GenCoords::new(0.0, 0.0, 0.0, 1.57, 0.0, 0.0);
        assert!(matches!(mass_matrix(&P0, &q), Err(Error::GimbalGuard { .. })));
        assert!(matches!(bias_vector(&P0, &q, &GenVel::default()), Err(Error::GimbalGuard { .. })));
    }
}
