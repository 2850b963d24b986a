//! Continuous-force cartpole.
//!
//! State is (x, ẋ, θ, θ̇) with the pole upright at θ = 2π (equivalently 0;
//! the angle is unwrapped). The goal sits at x = 1 m so that a goal-seeking
//! policy must actually translate the cart. Semi-implicit Euler at
//! dt = 0.02 s with the classic pole-on-cart accelerations.

use super::{BoxSet, ConstraintSets, Environment, NoiseSpec};
use nalgebra::{dvector, DMatrix, DVector};
use std::f64::consts::PI;

#[derive(Debug, Clone)]
pub struct Cartpole {
    pub gravity: f64,
    pub cart_mass: f64,
    pub pole_mass: f64,
    /// Half-length of the pole.
    pub length: f64,
    pub dt: f64,
    noise: NoiseSpec,
    constraints: ConstraintSets,
    initial: BoxSet,
}

impl Cartpole {
    /// Default constants; noise scale follows `(c0 + c1·|θ|)·I`.
    pub fn new(epsilon: f64) -> Self {
        Self::with_noise(NoiseSpec {
            epsilon,
            c0: 3e-3,
            c1: 5e-4,
            scale_index: 2,
        })
    }

    pub fn with_noise(noise: NoiseSpec) -> Self {
        let constraints = ConstraintSets {
            state: BoxSet::new(
                dvector![-4.0, -10.0, 9.0 * PI / 16.0, -8.0],
                dvector![4.0, 10.0, 39.0 * PI / 16.0, 8.0],
            )
            .expect("valid state box"),
            action: BoxSet::new(dvector![-2.0], dvector![2.0]).expect("valid action box"),
        };
        let up = 2.0 * PI;
        let initial = BoxSet::new(
            dvector![-0.05, -0.05, up - 0.05, -0.05],
            dvector![0.05, 0.05, up + 0.05, 0.05],
        )
        .expect("valid initial box");
        Self {
            gravity: 9.8,
            cart_mass: 1.0,
            pole_mass: 0.1,
            length: 0.5,
            dt: 0.02,
            noise,
            constraints,
            initial,
        }
    }

    /// Pole and cart accelerations (θ̈, ẍ) for the current state and force.
    fn accelerations(&self, s: &DVector<f64>, force: f64) -> (f64, f64) {
        let (theta, omega) = (s[2], s[3]);
        let (sin_t, cos_t) = (theta.sin(), theta.cos());
        let total = self.cart_mass + self.pole_mass;
        let pml = self.pole_mass * self.length;
        let temp = (force + pml * omega * omega * sin_t) / total;
        let denom = self.length * (4.0 / 3.0 - self.pole_mass * cos_t * cos_t / total);
        let theta_acc = (self.gravity * sin_t - cos_t * temp) / denom;
        let x_acc = temp - pml * theta_acc * cos_t / total;
        (theta_acc, x_acc)
    }
}

impl Environment for Cartpole {
    fn name(&self) -> &'static str {
        "cartpole"
    }

    fn state_dim(&self) -> usize {
        4
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn nominal(&self, s: &DVector<f64>, a: &DVector<f64>) -> DVector<f64> {
        let (theta_acc, x_acc) = self.accelerations(s, a[0]);
        let dt = self.dt;
        let v_next = s[1] + dt * x_acc;
        let x_next = s[0] + dt * v_next;
        let omega_next = s[3] + dt * theta_acc;
        let theta_next = s[2] + dt * omega_next;
        dvector![x_next, v_next, theta_next, omega_next]
    }

    fn jacobians(&self, s: &DVector<f64>, a: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let (theta, omega) = (s[2], s[3]);
        let (sin_t, cos_t) = (theta.sin(), theta.cos());
        let total = self.cart_mass + self.pole_mass;
        let pml = self.pole_mass * self.length;

        let temp = (a[0] + pml * omega * omega * sin_t) / total;
        let d_temp_d_theta = pml * omega * omega * cos_t / total;
        let d_temp_d_omega = 2.0 * pml * omega * sin_t / total;
        let d_temp_d_force = 1.0 / total;

        let denom = self.length * (4.0 / 3.0 - self.pole_mass * cos_t * cos_t / total);
        let d_denom_d_theta = self.length * 2.0 * self.pole_mass * cos_t * sin_t / total;

        let num = self.gravity * sin_t - cos_t * temp;
        let d_num_d_theta = self.gravity * cos_t + sin_t * temp - cos_t * d_temp_d_theta;
        let d_num_d_omega = -cos_t * d_temp_d_omega;
        let d_num_d_force = -cos_t * d_temp_d_force;

        let theta_acc = num / denom;
        let d_ta_d_theta = (d_num_d_theta * denom - num * d_denom_d_theta) / (denom * denom);
        let d_ta_d_omega = d_num_d_omega / denom;
        let d_ta_d_force = d_num_d_force / denom;

        let k = pml / total;
        let d_xa_d_theta = d_temp_d_theta - k * (d_ta_d_theta * cos_t - theta_acc * sin_t);
        let d_xa_d_omega = d_temp_d_omega - k * cos_t * d_ta_d_omega;
        let d_xa_d_force = d_temp_d_force - k * cos_t * d_ta_d_force;

        let dt = self.dt;
        let a_mat = DMatrix::from_row_slice(
            4,
            4,
            &[
                1.0,
                dt,
                dt * dt * d_xa_d_theta,
                dt * dt * d_xa_d_omega,
                0.0,
                1.0,
                dt * d_xa_d_theta,
                dt * d_xa_d_omega,
                0.0,
                0.0,
                1.0 + dt * dt * d_ta_d_theta,
                dt + dt * dt * d_ta_d_omega,
                0.0,
                0.0,
                dt * d_ta_d_theta,
                1.0 + dt * d_ta_d_omega,
            ],
        );
        let b_mat = DMatrix::from_row_slice(
            4,
            1,
            &[
                dt * dt * d_xa_d_force,
                dt * d_xa_d_force,
                dt * dt * d_ta_d_force,
                dt * d_ta_d_force,
            ],
        );
        (a_mat, b_mat)
    }

    fn noise(&self) -> &NoiseSpec {
        &self.noise
    }

    fn constraints(&self) -> &ConstraintSets {
        &self.constraints
    }

    fn goal(&self) -> DVector<f64> {
        dvector![1.0, 0.0, 2.0 * PI, 0.0]
    }

    fn initial_box(&self) -> BoxSet {
        self.initial.clone()
    }
}
