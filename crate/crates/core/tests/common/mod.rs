//! Independent oracles shared by the integration tests.
//!
//! Nothing here uses the Jacobian assembly of the library: the Lagrangian is
//! built from `kinetic_energy` and `potential_energy`, which in turn come
//! straight from the body velocities, and every derivative is taken by
//! finite differences.

#![allow(dead_code)]

use nalgebra::Vector6;
use rand::rngs::StdRng;
use rand::Rng;
use spherebot::dynamics::{kinetic_energy, potential_energy, GenCoords, GenVel};
use spherebot::RobotParams;

/// Step for position derivatives of the Lagrangian.
pub const FD_STEP: f64 = 1e-6;
/// Step for the time derivative of the momenta.
pub const FD_TIME_STEP: f64 = 1e-4;

fn unit(i: usize) -> Vector6<f64> {
    let mut v = Vector6::zeros();
    v[i] = 1.0;
    v
}

pub fn lagrangian(p: &RobotParams, q: &Vector6<f64>, qd: &Vector6<f64>) -> f64 {
    let q = GenCoords(*q);
    kinetic_energy(p, &q, &GenVel(*qd)).unwrap() - potential_energy(p, &q)
}

/// Generalized momenta `dL/dqd`. `L` is quadratic in `qd`, so the symmetric
/// difference with a unit step is exact up to rounding.
pub fn momenta(p: &RobotParams, q: &Vector6<f64>, qd: &Vector6<f64>) -> Vector6<f64> {
    Vector6::from_fn(|i, _| 0.5 * (lagrangian(p, q, &(qd + unit(i))) - lagrangian(p, q, &(qd - unit(i)))))
}

/// `d/dt(dL/dqd) - dL/dq` along the motion through `(q, qd)` with constant
/// acceleration `qdd`, by fourth-order central differences.
pub fn lagrange_operator(p: &RobotParams, q: &Vector6<f64>, qd: &Vector6<f64>, qdd: &Vector6<f64>) -> Vector6<f64> {
    let h = FD_TIME_STEP;
    let at = |s: f64| momenta(p, &(q + qd * s + qdd * (0.5 * s * s)), &(qd + qdd * s));
    let dp = (at(-2.0 * h) - at(2.0 * h) + (at(h) - at(-h)) * 8.0) / (12.0 * h);
    let dl_dq = Vector6::from_fn(|i, _| {
        let e = unit(i) * FD_STEP;
        (lagrangian(p, &(q + e), qd) - lagrangian(p, &(q - e), qd)) / (2.0 * FD_STEP)
    });
    dp - dl_dq
}

pub fn random_coords(rng: &mut StdRng) -> Vector6<f64> {
    Vector6::new(
        rng.random_range(-2.0..2.0),
        rng.random_range(-2.0..2.0),
        rng.random_range(-3.0..3.0),
        rng.random_range(-1.2..1.2),
        rng.random_range(-6.0..6.0),
        rng.random_range(-1.0..1.0),
    )
}

pub fn random_vector(rng: &mut StdRng, scale: f64) -> Vector6<f64> {
    Vector6::from_fn(|_, _| rng.random_range(-scale..scale))
}

/// P0 with every mass scaled by the given factors.
pub fn scaled_masses(hull: f64, yoke: f64, pendulum: f64) -> RobotParams {
    let p = RobotParams::REFERENCE;
    RobotParams {
        m_hull: p.m_hull * hull,
        m_yoke: p.m_yoke * yoke,
        m_pendulum: p.m_pendulum * pendulum,
        ..p
    }
}
