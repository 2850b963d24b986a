//! Probabilistic ensemble of Gaussian MLP dynamics models.

mod dataset;
mod fuse;
mod net;
mod serialize;
mod train;

pub use dataset::{Transition, TransitionDataset};
pub use fuse::{fuse, FusedMoments};
pub use net::{Dense, GaussianMlp};
pub use serialize::{FORMAT_VERSION, MODEL_FORMAT};
pub use train::{train, EpochRecord, TrainConfig, TrainOutcome};

use crate::error::{CoreError, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Componentwise affine normalization fitted from data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: DVector<f64>,
    pub std: DVector<f64>,
}

impl Normalizer {
    /// Fit from sample columns; standard deviations are floored to keep the
    /// transform invertible on constant dimensions.
    pub fn fit(samples: &DMatrix<f64>) -> Self {
        let n = samples.nrows();
        let count = samples.ncols().max(1) as f64;
        let mut mean = DVector::zeros(n);
        for col in samples.column_iter() {
            mean += col;
        }
        mean /= count;
        let mut var = DVector::zeros(n);
        for col in samples.column_iter() {
            let d = col - &mean;
            var += d.component_mul(&d);
        }
        var /= count;
        let std = var.map(|v| v.sqrt().max(1e-8));
        Self { mean, std }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: DVector::zeros(dim),
            std: DVector::from_element(dim, 1.0),
        }
    }

    pub fn normalize(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(x.len(), |i, _| (x[i] - self.mean[i]) / self.std[i])
    }

    pub fn normalize_batch(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = x.clone();
        for mut col in out.column_iter_mut() {
            for i in 0..col.len() {
                col[i] = (col[i] - self.mean[i]) / self.std[i];
            }
        }
        out
    }

    pub fn denormalize(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(x.len(), |i, _| x[i] * self.std[i] + self.mean[i])
    }
}

/// Trained ensemble.
///
/// Members operate in normalized space; predictions are denormalized on the
/// way out. When `predict_delta` is set (the default for trained models) the
/// networks model the state increment and the current state is added back.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub members: Vec<GaussianMlp>,
    pub input_norm: Normalizer,
    pub output_norm: Normalizer,
    pub state_dim: usize,
    pub action_dim: usize,
    pub predict_delta: bool,
}

impl EnsembleModel {
    pub fn member_count(&self) -> usize {
        self.members.len()
    }

    fn stack_input(&self, s: &DVector<f64>, a: &DVector<f64>) -> DVector<f64> {
        let mut x = DVector::zeros(self.state_dim + self.action_dim);
        x.rows_mut(0, self.state_dim).copy_from(s);
        x.rows_mut(self.state_dim, self.action_dim).copy_from(a);
        x
    }

    /// Denormalized prediction (mean next state, variance diagonal) of member `e`.
    pub fn predict_member(
        &self,
        e: usize,
        s: &DVector<f64>,
        a: &DVector<f64>,
    ) -> Result<(DVector<f64>, DVector<f64>)> {
        let member = self.members.get(e).ok_or_else(|| {
            CoreError::InvalidInput(format!(
                "member index {e} out of range (ensemble size {})",
                self.members.len()
            ))
        })?;
        let xn = self.input_norm.normalize(&self.stack_input(s, a));
        let (mean_n, logvar) = member.forward(&xn);
        let mut mean = self.output_norm.denormalize(&mean_n);
        if self.predict_delta {
            mean += s;
        }
        let var = DVector::from_fn(self.state_dim, |i, _| {
            self.output_norm.std[i] * self.output_norm.std[i] * logvar[i].exp()
        });
        Ok((mean, var))
    }

    /// All member predictions at (s, a).
    pub fn predict_all(
        &self,
        s: &DVector<f64>,
        a: &DVector<f64>,
    ) -> Result<Vec<(DVector<f64>, DVector<f64>)>> {
        (0..self.members.len())
            .map(|e| self.predict_member(e, s, a))
            .collect()
    }

    /// Fused moments at (s, a).
    pub fn fused(&self, s: &DVector<f64>, a: &DVector<f64>) -> Result<FusedMoments> {
        fuse(&self.predict_all(s, a)?)
    }

    /// Normalized Kalman-gain trace at (s, a).
    pub fn certainty(&self, s: &DVector<f64>, a: &DVector<f64>) -> Result<f64> {
        Ok(self.fused(s, a)?.certainty())
    }

    /// Membership in the certain set at level `xi`.
    pub fn in_certain_set(&self, s: &DVector<f64>, a: &DVector<f64>, xi: f64) -> Result<bool> {
        Ok(self.certainty(s, a)? >= xi)
    }

    /// Averaged member Jacobians of the denormalized mean prediction,
    /// split into state and action blocks. The chain runs through both
    /// normalizations; delta prediction contributes the identity on the
    /// state block.
    pub fn jacobians(
        &self,
        s: &DVector<f64>,
        a: &DVector<f64>,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let xn = self.input_norm.normalize(&self.stack_input(s, a));
        let n_in = self.state_dim + self.action_dim;
        let mut avg = DMatrix::zeros(self.state_dim, n_in);
        for member in &self.members {
            avg += member.mean_jacobian(&xn);
        }
        avg /= self.members.len() as f64;
        // Chain: d(out_std ⊙ m_n)/dx = diag(out_std) · J · diag(1/in_std)
        for r in 0..self.state_dim {
            for c in 0..n_in {
                avg[(r, c)] *= self.output_norm.std[r] / self.input_norm.std[c];
            }
        }
        let mut a_mat = avg.columns(0, self.state_dim).into_owned();
        let b_mat = avg.columns(self.state_dim, self.action_dim).into_owned();
        if self.predict_delta {
            for i in 0..self.state_dim {
                a_mat[(i, i)] += 1.0;
            }
        }
        Ok((a_mat, b_mat))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use nalgebra::dvector;

    /// A single "network" that is exactly linear: one hidden tanh layer is
    /// bypassed by keeping inputs tiny is awkward, so instead build a
    /// two-layer net and overwrite it to act linearly via a wide linear
    /// region: tanh(x) ≈ x only approximately. For exactness tests we
    /// instead check the averaging property and the delta identity.
    fn tiny_model(predict_delta: bool) -> EnsembleModel {
        let mut rng = substream(17, &[0]);
        let members = (0..2)
            .map(|_| GaussianMlp::new(3, 2, &[6, 6], -18.0, 4.6, &mut rng))
            .collect();
        EnsembleModel {
            members,
            input_norm: Normalizer::identity(3),
            output_norm: Normalizer::identity(2),
            state_dim: 2,
            action_dim: 1,
            predict_delta,
        }
    }

    #[test]
    fn member_index_out_of_range_is_rejected() {
        let model = tiny_model(true);
        assert!(model
            .predict_member(2, &dvector![0.0, 0.0], &dvector![0.0])
            .is_err());
    }

    #[test]
    fn jacobians_average_members() {
        let model = tiny_model(false);
        let s = dvector![0.2, -0.4];
        let a = dvector![0.1];
        let (a_full, b_full) = model.jacobians(&s, &a).unwrap();
        // Single-member models from each member.
        let mut single0 = model.clone();
        single0.members = vec![model.members[0].clone()];
        let mut single1 = model.clone();
        single1.members = vec![model.members[1].clone()];
        let (a0, b0) = single0.jacobians(&s, &a).unwrap();
        let (a1, b1) = single1.jacobians(&s, &a).unwrap();
        assert!(((a0 + a1) * 0.5 - a_full).amax() < 1e-12);
        assert!(((b0 + b1) * 0.5 - b_full).amax() < 1e-12);
    }

    #[test]
    fn delta_prediction_adds_identity_to_state_jacobian() {
        let direct = tiny_model(false);
        let mut delta = direct.clone();
        delta.predict_delta = true;
        let s = dvector![0.3, 0.1];
        let a = dvector![-0.2];
        let (a_direct, _) = direct.jacobians(&s, &a).unwrap();
        let (a_delta, _) = delta.jacobians(&s, &a).unwrap();
        assert!((a_delta - a_direct - DMatrix::identity(2, 2)).amax() < 1e-12);
    }

    #[test]
    fn prediction_at_training_mean_is_finite() {
        let model = tiny_model(true);
        let (mu, var) = model
            .predict_member(0, &dvector![0.0, 0.0], &dvector![0.0])
            .unwrap();
        assert!(mu.iter().all(|v| v.is_finite()));
        assert!(var.iter().all(|v| v.is_finite() && *v > 0.0));
    }
}
