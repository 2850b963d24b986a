//! Truncated heteroscedastic process noise.

use nalgebra::DVector;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

/// Process-noise specification: `L(s) = (c0 + c1·|s[scale_index]|)·I` and a
/// hyperball bound `‖w‖₂² ≤ epsilon` on the raw draw.
///
/// `c1 = 0` gives the homoscedastic case. The Lipschitz constant of the
/// noise-scale map in Frobenius norm is `c1·√n_S`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NoiseSpec {
    pub epsilon: f64,
    pub c0: f64,
    pub c1: f64,
    /// State component whose absolute value drives the scale (ignored when c1 = 0).
    pub scale_index: usize,
}

impl NoiseSpec {
    pub fn homoscedastic(epsilon: f64, c0: f64) -> Self {
        Self {
            epsilon,
            c0,
            c1: 0.0,
            scale_index: 0,
        }
    }

    pub fn scale_factor(&self, s: &DVector<f64>) -> f64 {
        self.c0 + self.c1 * s[self.scale_index].abs()
    }

    /// Lipschitz constant of s ↦ L(s) in Frobenius norm for an n-dimensional state.
    pub fn scale_lipschitz(&self, dim: usize) -> f64 {
        self.c1 * (dim as f64).sqrt()
    }
}

/// Draw standard-normal noise rejected to the hyperball `‖w‖₂² ≤ epsilon`.
///
/// Rejection resampling keeps the distribution symmetric, so `E[w] = 0`
/// exactly. `epsilon = 0` returns the zero vector. The attempt cap only
/// matters for degenerate configurations where the acceptance probability
/// underflows; the zero vector (always a member of the ball) is returned
/// then.
pub fn sample_raw_noise(epsilon: f64, dim: usize, rng: &mut ChaCha12Rng) -> DVector<f64> {
    assert!(epsilon >= 0.0, "noise bound must be nonnegative");
    if epsilon == 0.0 {
        return DVector::zeros(dim);
    }
    for _ in 0..1_000_000 {
        let w = DVector::from_fn(dim, |_, _| StandardNormal.sample(rng));
        if w.norm_squared() <= epsilon {
            return w;
        }
    }
    DVector::zeros(dim)
}

/// Scaled process noise `L(s)·w` for the heteroscedastic family above.
pub fn sample_noise(
    s: &DVector<f64>,
    _a: &DVector<f64>,
    spec: &NoiseSpec,
    rng: &mut ChaCha12Rng,
) -> DVector<f64> {
    sample_raw_noise(spec.epsilon, s.len(), rng) * spec.scale_factor(s)
}
