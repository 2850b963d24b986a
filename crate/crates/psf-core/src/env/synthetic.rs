//! Synthetic two-state system with a quadratic nonlinearity.
//!
//! Because the nonlinearity is quadratic, the Hessian of the dynamics is
//! constant and the regularity constants of the tube propagation are exact,
//! not estimated: `ℓ_∇μ = γ·√5` for the map below, and the noise-scale
//! Lipschitz constant comes from the heteroscedastic family. This makes the
//! system suitable as a ground-truth check for full reachable-set
//! containment.

use super::{BoxSet, ConstraintSets, Environment, NoiseSpec};
use nalgebra::{dvector, DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct SyntheticQuad {
    pub a0: DMatrix<f64>,
    pub b0: DMatrix<f64>,
    /// Strength of the quadratic term [γ(s₁² + s₂²), γ·s₁s₂].
    pub gamma: f64,
    noise: NoiseSpec,
    constraints: ConstraintSets,
    initial: BoxSet,
}

impl SyntheticQuad {
    pub fn new(epsilon: f64) -> Self {
        Self {
            a0: DMatrix::from_row_slice(2, 2, &[0.9, 0.1, -0.05, 0.95]),
            b0: DMatrix::from_row_slice(2, 1, &[0.05, 0.1]),
            gamma: 0.05,
            noise: NoiseSpec {
                epsilon,
                c0: 2e-3,
                c1: 5e-4,
                scale_index: 0,
            },
            constraints: ConstraintSets {
                state: BoxSet::new(dvector![-3.0, -3.0], dvector![3.0, 3.0])
                    .expect("valid state box"),
                action: BoxSet::new(dvector![-2.0], dvector![2.0]).expect("valid action box"),
            },
            initial: BoxSet::new(dvector![-0.1, -0.1], dvector![0.1, 0.1])
                .expect("valid initial box"),
        }
    }

    /// Exact Lipschitz constant of s ↦ ∇μ(s) in Frobenius norm.
    ///
    /// The two Hessians are constant: H₁ = 2γI and H₂ = γ[[0,1],[1,0]], so
    /// ‖∇μ(x)−∇μ(y)‖_F = γ√5‖x−y‖₂ exactly.
    pub fn grad_lipschitz(&self) -> f64 {
        self.gamma * 5.0_f64.sqrt()
    }

    pub fn noise_mut(&mut self) -> &mut NoiseSpec {
        &mut self.noise
    }
}

impl Environment for SyntheticQuad {
    fn name(&self) -> &'static str {
        "synthetic"
    }

    fn state_dim(&self) -> usize {
        2
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn nominal(&self, s: &DVector<f64>, a: &DVector<f64>) -> DVector<f64> {
        let quad = dvector![
            self.gamma * (s[0] * s[0] + s[1] * s[1]),
            self.gamma * s[0] * s[1]
        ];
        &self.a0 * s + &self.b0 * a + quad
    }

    fn jacobians(&self, s: &DVector<f64>, _a: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let g = self.gamma;
        let quad_jac = DMatrix::from_row_slice(
            2,
            2,
            &[2.0 * g * s[0], 2.0 * g * s[1], g * s[1], g * s[0]],
        );
        (&self.a0 + quad_jac, self.b0.clone())
    }

    fn noise(&self) -> &NoiseSpec {
        &self.noise
    }

    fn constraints(&self) -> &ConstraintSets {
        &self.constraints
    }

    fn goal(&self) -> DVector<f64> {
        dvector![0.0, 0.0]
    }

    fn initial_box(&self) -> BoxSet {
        self.initial.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hessian_lipschitz_constant_is_tight() {
        // Sample pairs of points and verify ‖∇μ(x)−∇μ(y)‖_F = γ√5‖x−y‖.
        let env = SyntheticQuad::new(1.0);
        let a = dvector![0.0];
        let pts = [
            (dvector![0.3, -0.4], dvector![-0.1, 0.2]),
            (dvector![1.0, 1.0], dvector![0.0, 0.0]),
        ];
        for (x, y) in pts {
            let (jx, _) = env.jacobians(&x, &a);
            let (jy, _) = env.jacobians(&y, &a);
            let diff = (jx - jy).norm();
            let bound = env.grad_lipschitz() * (x - y).norm();
            assert!((diff - bound).abs() < 1e-12, "diff {diff} vs bound {bound}");
        }
    }
}
