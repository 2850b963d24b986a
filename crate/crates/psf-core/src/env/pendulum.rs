//! Torque-limited pendulum swing-up.
//!
//! State is (θ, θ̇) with the upright position at θ = 2π and the hanging
//! position at θ = π; the angle is not wrapped, so constraint boxes act on
//! the unwrapped value. Semi-implicit Euler at dt = 0.05 s.

use super::{BoxSet, ConstraintSets, Environment, NoiseSpec};
use nalgebra::{dvector, DMatrix, DVector};
use std::f64::consts::PI;

#[derive(Debug, Clone)]
pub struct Pendulum {
    pub gravity: f64,
    pub mass: f64,
    pub length: f64,
    pub dt: f64,
    noise: NoiseSpec,
    constraints: ConstraintSets,
    initial: BoxSet,
}

impl Pendulum {
    /// Default physical constants with the given noise bound.
    pub fn new(epsilon: f64) -> Self {
        Self::with_noise(NoiseSpec::homoscedastic(epsilon, 3e-3))
    }

    pub fn with_noise(noise: NoiseSpec) -> Self {
        let constraints = ConstraintSets {
            state: BoxSet::new(
                dvector![PI / 2.0 + PI / 16.0, -8.0],
                dvector![5.0 * PI / 2.0 - PI / 16.0, 8.0],
            )
            .expect("valid state box"),
            action: BoxSet::new(dvector![-2.0], dvector![2.0]).expect("valid action box"),
        };
        let initial = BoxSet::new(dvector![PI - 0.05, -0.05], dvector![PI + 0.05, 0.05])
            .expect("valid initial box");
        Self {
            gravity: 10.0,
            mass: 1.0,
            length: 1.0,
            dt: 0.05,
            noise,
            constraints,
            initial,
        }
    }

    fn gravity_coeff(&self) -> f64 {
        1.5 * self.gravity / self.length
    }

    fn torque_coeff(&self) -> f64 {
        3.0 / (self.mass * self.length * self.length)
    }
}

impl Environment for Pendulum {
    fn name(&self) -> &'static str {
        "pendulum"
    }

    fn state_dim(&self) -> usize {
        2
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn nominal(&self, s: &DVector<f64>, a: &DVector<f64>) -> DVector<f64> {
        let (theta, omega) = (s[0], s[1]);
        let omega_next =
            omega + self.dt * (self.gravity_coeff() * theta.sin() + self.torque_coeff() * a[0]);
        let theta_next = theta + self.dt * omega_next;
        dvector![theta_next, omega_next]
    }

    fn jacobians(&self, s: &DVector<f64>, _a: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let dt = self.dt;
        let dg = self.gravity_coeff() * s[0].cos();
        let c2 = self.torque_coeff();
        let a = DMatrix::from_row_slice(2, 2, &[1.0 + dt * dt * dg, dt, dt * dg, 1.0]);
        let b = DMatrix::from_row_slice(2, 1, &[dt * dt * c2, dt * c2]);
        (a, b)
    }

    fn noise(&self) -> &NoiseSpec {
        &self.noise
    }

    fn constraints(&self) -> &ConstraintSets {
        &self.constraints
    }

    fn goal(&self) -> DVector<f64> {
        dvector![2.0 * PI, 0.0]
    }

    fn initial_box(&self) -> BoxSet {
        self.initial.clone()
    }
}
