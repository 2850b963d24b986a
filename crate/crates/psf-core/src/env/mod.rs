//! Benchmark environments with bounded heteroscedastic process noise.
//!
//! All environments follow the same transition structure: a deterministic
//! nominal map plus state-dependent isotropic noise whose raw draw is
//! rejected to a hyperball of squared radius `epsilon`. Dynamics are
//! semi-implicit Euler integrators with analytic Jacobians so that LQR
//! design and finite-difference checks are exact.

mod cartpole;
mod lqr;
mod noise;
mod pendulum;
mod rollout;
mod synthetic;

pub use cartpole::Cartpole;
pub use lqr::{dlqr, spectral_radius, InitialController};
pub use noise::{sample_noise, sample_raw_noise, NoiseSpec};
pub use pendulum::Pendulum;
pub use rollout::{collect_transitions, export_trajectories_csv, mc_rollout_ensemble, Trajectory};
pub use synthetic::SyntheticQuad;

use crate::error::{CoreError, Result};
use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha12Rng;

/// Axis-aligned box, used for state and action constraint sets.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BoxSet {
    pub lo: DVector<f64>,
    pub hi: DVector<f64>,
}

impl BoxSet {
    pub fn new(lo: DVector<f64>, hi: DVector<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(CoreError::DimensionMismatch {
                expected: lo.len(),
                got: hi.len(),
                context: "box bounds".into(),
            });
        }
        if lo.iter().zip(hi.iter()).any(|(l, h)| !(l < h)) {
            return Err(CoreError::InvalidInput(
                "box requires lo < hi per dimension".into(),
            ));
        }
        Ok(Self { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(self.hi.iter()))
            .all(|(v, (l, h))| *v >= *l && *v <= *h)
    }

    pub fn clamp(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(x.len(), |i, _| x[i].clamp(self.lo[i], self.hi[i]))
    }

    pub fn center(&self) -> DVector<f64> {
        (&self.lo + &self.hi) * 0.5
    }

    pub fn sample_uniform(&self, rng: &mut ChaCha12Rng) -> DVector<f64> {
        use rand::Rng;
        DVector::from_fn(self.dim(), |i, _| {
            rng.random_range(self.lo[i]..self.hi[i])
        })
    }
}

/// State and action constraint boxes.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ConstraintSets {
    pub state: BoxSet,
    pub action: BoxSet,
}

/// A stochastic environment `s⁺ = μ(s, a) + L(s) w` with `‖w‖₂² ≤ ε`.
pub trait Environment: Send + Sync {
    fn name(&self) -> &'static str;
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;

    /// Deterministic nominal dynamics μ(s, a).
    fn nominal(&self, s: &DVector<f64>, a: &DVector<f64>) -> DVector<f64>;

    /// Analytic Jacobians (∂μ/∂s, ∂μ/∂a) at (s, a).
    fn jacobians(&self, s: &DVector<f64>, a: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>);

    fn noise(&self) -> &NoiseSpec;
    fn constraints(&self) -> &ConstraintSets;

    /// Goal state used by goal-seeking policies and the return proxy.
    fn goal(&self) -> DVector<f64>;

    /// The reset region 𝕀.
    fn initial_box(&self) -> BoxSet;

    fn sample_initial(&self, rng: &mut ChaCha12Rng) -> DVector<f64> {
        self.initial_box().sample_uniform(rng)
    }

    /// One noisy step; also returns the squared norm of the raw noise draw.
    fn step_with_noise(
        &self,
        s: &DVector<f64>,
        a: &DVector<f64>,
        rng: &mut ChaCha12Rng,
    ) -> Result<(DVector<f64>, f64)> {
        if s.iter().any(|v| !v.is_finite()) || a.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::InvalidInput(
                "state and action must be finite".into(),
            ));
        }
        if s.len() != self.state_dim() {
            return Err(CoreError::DimensionMismatch {
                expected: self.state_dim(),
                got: s.len(),
                context: format!("{} state", self.name()),
            });
        }
        let raw = sample_raw_noise(self.noise().epsilon, self.state_dim(), rng);
        let raw_sq = raw.norm_squared();
        let scale = self.noise().scale_factor(s);
        Ok((self.nominal(s, a) + raw * scale, raw_sq))
    }

    fn step(
        &self,
        s: &DVector<f64>,
        a: &DVector<f64>,
        rng: &mut ChaCha12Rng,
    ) -> Result<DVector<f64>> {
        self.step_with_noise(s, a, rng).map(|(s, _)| s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    #[test]
    fn box_validates_bounds() {
        assert!(BoxSet::new(dvector![0.0, 0.0], dvector![1.0, 1.0]).is_ok());
        assert!(BoxSet::new(dvector![0.0], dvector![0.0]).is_err());
        assert!(BoxSet::new(dvector![0.0, 2.0], dvector![1.0, 1.0]).is_err());
    }

    #[test]
    fn box_clamp_and_contains_agree() {
        let b = BoxSet::new(dvector![-1.0, -2.0], dvector![1.0, 2.0]).unwrap();
        let x = dvector![3.0, -5.0];
        assert!(!b.contains(&x));
        let c = b.clamp(&x);
        assert!(b.contains(&c));
        assert_eq!(c, dvector![1.0, -2.0]);
    }
}
