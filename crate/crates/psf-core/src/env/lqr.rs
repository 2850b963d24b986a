//! Discrete-time LQR design and the data-generating initial controllers.

use super::BoxSet;
use crate::error::{CoreError, Result};
use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

/// Solve the discrete-time infinite-horizon LQR problem by Riccati iteration.
///
/// Returns the gain `K` for the feedback law `a = -K (s - s_ref)`. The
/// iteration converges for stabilizable `(A, B)`; non-convergence after
/// `max_iters` is reported as a numerical error.
pub fn dlqr(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    max_iters: usize,
    tol: f64,
) -> Result<DMatrix<f64>> {
    let mut p = q.clone();
    for _ in 0..max_iters {
        let btp = b.transpose() * &p;
        let gram = r + &btp * b;
        let gram_inv = gram.clone().try_inverse().ok_or_else(|| {
            CoreError::Numerical("singular input-weight Gram matrix in Riccati step".into())
        })?;
        let k = &gram_inv * &btp * a;
        let acl = a - b * &k;
        let p_next = q + k.transpose() * r * &k + acl.transpose() * &p * &acl;
        let delta = (&p_next - &p).amax();
        p = p_next;
        if delta < tol {
            let btp = b.transpose() * &p;
            let gram = r + &btp * b;
            let gram_inv = gram.try_inverse().ok_or_else(|| {
                CoreError::Numerical("singular Gram matrix at Riccati fixed point".into())
            })?;
            return Ok(gram_inv * btp * a);
        }
    }
    Err(CoreError::Numerical(format!(
        "Riccati iteration did not converge within {max_iters} iterations"
    )))
}

/// Spectral radius of a (possibly nonsymmetric) real matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// Data-generating controller used before any model exists.
#[derive(Debug, Clone)]
pub enum InitialController {
    /// LQR around a set point plus Gaussian excitation, clamped to the action box.
    LqrNoisy {
        gain: DMatrix<f64>,
        set_point: DVector<f64>,
        noise_std: f64,
    },
    /// Uniform over the action box.
    UniformRandom,
}

impl InitialController {
    pub fn action(
        &self,
        s: &DVector<f64>,
        action_box: &BoxSet,
        rng: &mut ChaCha12Rng,
    ) -> DVector<f64> {
        match self {
            InitialController::LqrNoisy {
                gain,
                set_point,
                noise_std,
            } => {
                let mut a = -(gain * (s - set_point));
                for v in a.iter_mut() {
                    let eta: f64 = StandardNormal.sample(rng);
                    *v += noise_std * eta;
                }
                action_box.clamp(&a)
            }
            InitialController::UniformRandom => action_box.sample_uniform(rng),
        }
    }
}
