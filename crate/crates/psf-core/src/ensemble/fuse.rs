//! Sensor-fusion decomposition of ensemble predictions.
//!
//! Member predictions `(μ_e, Σ_e)` with diagonal Σ_e are combined into:
//!
//! * `sigma_bar` — aleatoric covariance, the harmonic mean of member
//!   covariances (elementwise, since they are diagonal);
//! * `mu_bar` — precision-weighted nominal mean;
//! * `sigma_hat` — epistemic covariance, the spread of member means;
//! * `kalman_gain` — `Σ̄(Σ̄+Σ̂)⁻¹`, the fraction of predictive variance that
//!   is irreducible noise rather than model uncertainty.
//!
//! The normalized trace of the Kalman gain is the certainty measure: 1 when
//! members agree exactly, approaching 0 under strong disagreement.

use crate::error::{CoreError, Result};
use nalgebra::{Cholesky, DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct FusedMoments {
    pub mu_bar: DVector<f64>,
    /// Diagonal of the aleatoric covariance.
    pub sigma_bar: DVector<f64>,
    pub sigma_hat: DMatrix<f64>,
    pub kalman_gain: DMatrix<f64>,
}

impl FusedMoments {
    pub fn dim(&self) -> usize {
        self.mu_bar.len()
    }

    /// Aleatoric covariance as a dense matrix.
    pub fn sigma_bar_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.sigma_bar)
    }

    /// Normalized trace of the Kalman gain, in (0, 1].
    pub fn certainty(&self) -> f64 {
        self.kalman_gain.trace() / self.dim() as f64
    }
}

/// Fuse member predictions `(mean, variance diagonal)`.
pub fn fuse(members: &[(DVector<f64>, DVector<f64>)]) -> Result<FusedMoments> {
    if members.is_empty() {
        return Err(CoreError::InvalidInput("fuse requires at least one member".into()));
    }
    let n = members[0].0.len();
    let e = members.len() as f64;
    for (mu, var) in members {
        if mu.len() != n || var.len() != n {
            return Err(CoreError::DimensionMismatch {
                expected: n,
                got: mu.len().min(var.len()),
                context: "fusion member".into(),
            });
        }
        if var.iter().any(|v| !(*v > 0.0)) {
            return Err(CoreError::Numerical(
                "member variances must be strictly positive".into(),
            ));
        }
    }

    // Mean precision and precision-weighted mean, elementwise on diagonals.
    let mut precision = DVector::zeros(n);
    let mut weighted_mean = DVector::zeros(n);
    for (mu, var) in members {
        for i in 0..n {
            precision[i] += 1.0 / var[i];
            weighted_mean[i] += mu[i] / var[i];
        }
    }
    precision /= e;
    weighted_mean /= e;
    let sigma_bar = precision.map(|p| 1.0 / p);
    let mu_bar = DVector::from_fn(n, |i, _| sigma_bar[i] * weighted_mean[i]);

    let mut sigma_hat = DMatrix::zeros(n, n);
    for (mu, _) in members {
        let d = mu - &mu_bar;
        sigma_hat += &d * d.transpose();
    }
    sigma_hat /= e;

    // G = Σ̄ (Σ̄ + Σ̂)⁻¹, computed through a Cholesky solve rather than an
    // explicit inverse: (Σ̄+Σ̂) X = Σ̄, G = Xᵀ.
    let total = DMatrix::from_diagonal(&sigma_bar) + &sigma_hat;
    let chol = Cholesky::new(total).ok_or_else(|| {
        CoreError::Numerical("total predictive covariance is not positive definite".into())
    })?;
    let x = chol.solve(&DMatrix::from_diagonal(&sigma_bar));
    let kalman_gain = x.transpose();

    Ok(FusedMoments {
        mu_bar,
        sigma_bar,
        sigma_hat,
        kalman_gain,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    #[test]
    fn identical_members_give_identity_gain_and_zero_epistemic() {
        let mu = dvector![0.3, -1.2, 4.0];
        let var = dvector![0.5, 1.0, 2.0];
        let fused = fuse(&[(mu.clone(), var.clone()), (mu.clone(), var.clone())]).unwrap();
        assert!((fused.certainty() - 1.0).abs() < 1e-12);
        assert!((&fused.mu_bar - mu).amax() < 1e-12);
        assert!((&fused.sigma_bar - var).amax() < 1e-12);
        assert!(fused.sigma_hat.amax() < 1e-12);
        assert!((&fused.kalman_gain - DMatrix::identity(3, 3)).amax() < 1e-12);
    }

    #[test]
    fn one_dimensional_two_member_example() {
        // variances (1,1), means (0,2): Σ̄=1, μ̄=1, Σ̂=1, G=0.5.
        let fused = fuse(&[
            (dvector![0.0], dvector![1.0]),
            (dvector![2.0], dvector![1.0]),
        ])
        .unwrap();
        assert!((fused.sigma_bar[0] - 1.0).abs() < 1e-12);
        assert!((fused.mu_bar[0] - 1.0).abs() < 1e-12);
        assert!((fused.sigma_hat[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((fused.kalman_gain[(0, 0)] - 0.5).abs() < 1e-12);
        assert!((fused.certainty() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn harmonic_mean_of_variances() {
        // variances (1,3): Σ̄ = 2/(1 + 1/3) = 1.5
        let fused = fuse(&[
            (dvector![0.0], dvector![1.0]),
            (dvector![0.0], dvector![3.0]),
        ])
        .unwrap();
        assert!((fused.sigma_bar[0] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn non_positive_variance_is_an_error() {
        assert!(fuse(&[(dvector![0.0], dvector![0.0])]).is_err());
        assert!(fuse(&[(dvector![0.0], dvector![-1.0])]).is_err());
    }
}
