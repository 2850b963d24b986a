//! Ellipsoidal reachable tubes.
//!
//! A tube is a nominal trajectory plus a covariance sequence whose
//! epsilon-level sets overapproximate the robustly reachable sets of the
//! environment. Propagation linearizes the fused model dynamics along the
//! nominal trajectory and inflates the covariance by an explicit bound on
//! the linearization error so the overapproximation survives the
//! linearization.

mod ellipsoid;
mod propagate;
mod tighten;

pub use ellipsoid::{level_set, Ellipsoid};
pub use propagate::{
    build_tube, closed_loop_matrix, inflate_outer, lin_error_bound, propagate_step, StepResult,
};
pub use tighten::{certainty_margin, tighten_action_box, tighten_box, tighten_halfspace, TightenedBox};

use crate::ensemble::EnsembleModel;
use crate::env::Environment;
use crate::error::Result;
use nalgebra::{DMatrix, DVector};

/// Regularity constants used to bound the linearization error and the
/// certainty decay across the reachable set.
///
/// The all-zero bundle selects the naive tube: covariance propagates through
/// the linearized dynamics with no inflation and the certainty constraint is
/// untightened.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LipschitzBundle {
    /// Lipschitz constant of the dynamics Jacobian (bounds the Hessian).
    pub grad_mu: f64,
    /// Lipschitz constant of the noise-scale map.
    pub noise_scale: f64,
    /// Lipschitz constant of the certainty measure.
    pub certainty: f64,
}

impl LipschitzBundle {
    pub const ZERO: Self = Self {
        grad_mu: 0.0,
        noise_scale: 0.0,
        certainty: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        if self.grad_mu < 0.0 || self.noise_scale < 0.0 || self.certainty < 0.0 {
            return Err(crate::error::CoreError::InvalidInput(
                "Lipschitz constants must be nonnegative".into(),
            ));
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.grad_mu == 0.0 && self.noise_scale == 0.0 && self.certainty == 0.0
    }
}

/// Fused dynamics seen by the tube propagation and the safety filter:
/// nominal mean, aleatoric covariance diagonal, averaged Jacobians, and the
/// certainty measure.
pub trait DynamicsModel: Send + Sync {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;

    /// Nominal mean and aleatoric covariance diagonal at (s, a).
    fn mean_and_aleatoric(&self, s: &DVector<f64>, a: &DVector<f64>)
        -> Result<(DVector<f64>, DVector<f64>)>;

    /// Averaged Jacobians (∂μ̄/∂s, ∂μ̄/∂a) at (s, a).
    fn jacobians(&self, s: &DVector<f64>, a: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)>;

    /// Normalized Kalman-gain trace at (s, a), in (0, 1].
    fn certainty(&self, s: &DVector<f64>, a: &DVector<f64>) -> Result<f64>;
}

impl DynamicsModel for EnsembleModel {
    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn mean_and_aleatoric(
        &self,
        s: &DVector<f64>,
        a: &DVector<f64>,
    ) -> Result<(DVector<f64>, DVector<f64>)> {
        let fused = self.fused(s, a)?;
        Ok((fused.mu_bar, fused.sigma_bar))
    }

    fn jacobians(&self, s: &DVector<f64>, a: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        EnsembleModel::jacobians(self, s, a)
    }

    fn certainty(&self, s: &DVector<f64>, a: &DVector<f64>) -> Result<f64> {
        EnsembleModel::certainty(self, s, a)
    }
}

/// Ground-truth dynamics wrapped as a model: exact mean and Jacobians,
/// aleatoric covariance equal to the true noise covariance, certainty 1.
///
/// Satisfies the consistency and unbiasedness conditions of the tube
/// propagation by construction, which makes it the reference model for
/// containment experiments.
pub struct ExactModel<'a, E: Environment + ?Sized> {
    env: &'a E,
}

impl<'a, E: Environment + ?Sized> ExactModel<'a, E> {
    pub fn new(env: &'a E) -> Self {
        Self { env }
    }
}

impl<E: Environment + ?Sized> DynamicsModel for ExactModel<'_, E> {
    fn state_dim(&self) -> usize {
        self.env.state_dim()
    }

    fn action_dim(&self) -> usize {
        self.env.action_dim()
    }

    fn mean_and_aleatoric(
        &self,
        s: &DVector<f64>,
        a: &DVector<f64>,
    ) -> Result<(DVector<f64>, DVector<f64>)> {
        let scale = self.env.noise().scale_factor(s);
        Ok((
            self.env.nominal(s, a),
            DVector::from_element(self.env.state_dim(), scale * scale),
        ))
    }

    fn jacobians(&self, s: &DVector<f64>, a: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        Ok(self.env.jacobians(s, a))
    }

    fn certainty(&self, _s: &DVector<f64>, _a: &DVector<f64>) -> Result<f64> {
        Ok(1.0)
    }
}

/// A propagated reachable tube.
#[derive(Debug, Clone)]
pub struct Tube {
    /// Nominal states z_0..z_N.
    pub nominal: Vec<DVector<f64>>,
    /// Actions u_0..u_{N-1}.
    pub actions: Vec<DVector<f64>>,
    /// Inflated covariances P_0..P_N (P_0 = 0).
    pub cov: Vec<DMatrix<f64>>,
    /// Naive covariances Q_0..Q_N (Q_0 = 0); equal to `cov` for a zero bundle.
    pub naive_cov: Vec<DMatrix<f64>>,
    /// Ancillary gains K_0..K_{N-1}.
    pub gains: Vec<DMatrix<f64>>,
    /// Linearization-error bounds e^max_0..e^max_{N-1}.
    pub err_bounds: Vec<f64>,
    /// Certainty margins g_0..g_{N-1}.
    pub margins: Vec<f64>,
    pub epsilon: f64,
}

impl Tube {
    /// Number of propagation steps N.
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Level-set ellipsoid at step `n` (inflated covariance).
    pub fn ellipsoid(&self, n: usize) -> Result<Ellipsoid> {
        Ellipsoid::new(self.nominal[n].clone(), self.cov[n].clone(), self.epsilon)
    }

    /// Level-set ellipsoid at step `n` from the naive covariance.
    pub fn naive_ellipsoid(&self, n: usize) -> Result<Ellipsoid> {
        Ellipsoid::new(
            self.nominal[n].clone(),
            self.naive_cov[n].clone(),
            self.epsilon,
        )
    }
}
