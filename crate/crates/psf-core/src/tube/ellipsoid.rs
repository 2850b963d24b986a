//! Level-set ellipsoids with a cached factor.
//!
//! The set is `{ s : (s−z)ᵀ(εP)⁻¹(s−z) ≤ 1 }`, equivalently `z ⊕ Mᵀ𝔔` with
//! `MᵀM = εP` and 𝔔 the unit ball. The factor is built from a symmetric
//! eigendecomposition so singular shape matrices (notably P₀ = 0) are
//! handled: membership along a zero-eigenvalue direction means exact
//! equality of that coordinate.

use crate::error::{CoreError, Result};
use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Largest eigenvalue of the symmetrized matrix, clamped at zero.
pub(crate) fn lambda_max(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .fold(0.0_f64, |acc, &v| acc.max(v))
}

#[derive(Debug, Clone)]
pub struct Ellipsoid {
    pub center: DVector<f64>,
    /// Shape matrix P (the level set uses εP).
    pub shape: DMatrix<f64>,
    pub epsilon: f64,
    /// Factor M with MᵀM = εP.
    factor: DMatrix<f64>,
    /// Eigenvalues of εP, clamped at zero.
    eigvals: DVector<f64>,
    /// Eigenvectors of εP (columns).
    eigvecs: DMatrix<f64>,
}

impl Ellipsoid {
    pub fn new(center: DVector<f64>, shape: DMatrix<f64>, epsilon: f64) -> Result<Self> {
        let n = center.len();
        if shape.nrows() != n || shape.ncols() != n {
            return Err(CoreError::DimensionMismatch {
                expected: n,
                got: shape.nrows(),
                context: "ellipsoid shape".into(),
            });
        }
        if !(epsilon > 0.0) {
            return Err(CoreError::InvalidInput("epsilon must be positive".into()));
        }
        let asym = (&shape - shape.transpose()).amax();
        let scale = shape.amax().max(1.0);
        if asym > 1e-9 * scale {
            return Err(CoreError::InvalidInput(format!(
                "shape matrix is not symmetric (asymmetry {asym:.3e})"
            )));
        }
        let sym = (&shape + shape.transpose()) * (0.5 * epsilon);
        let eig = SymmetricEigen::new(sym);
        let min_eig = eig.eigenvalues.min();
        if min_eig < -1e-8 * scale.max(epsilon) {
            return Err(CoreError::InvalidInput(format!(
                "shape matrix is not positive semidefinite (min eigenvalue {min_eig:.3e})"
            )));
        }
        let eigvals = eig.eigenvalues.map(|v| v.max(0.0));
        let eigvecs = eig.eigenvectors;
        // M = Λ^{1/2} Vᵀ  so that MᵀM = V Λ Vᵀ = εP.
        let mut factor = eigvecs.transpose();
        for (r, mut row) in factor.row_iter_mut().enumerate() {
            row *= eigvals[r].sqrt();
        }
        Ok(Self {
            center,
            shape,
            epsilon,
            factor,
            eigvals,
            eigvecs,
        })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    /// Quadratic-form value along nondegenerate directions, treating
    /// zero-eigenvalue directions as hard equality constraints.
    pub fn contains(&self, s: &DVector<f64>, tol: f64) -> bool {
        let d = s - &self.center;
        let y = self.eigvecs.transpose() * d;
        let scale = self.eigvals.max().max(1.0);
        let zero_cut = 1e-12 * scale;
        let mut quad = 0.0;
        for i in 0..y.len() {
            if self.eigvals[i] > zero_cut {
                quad += y[i] * y[i] / self.eigvals[i];
            } else if y[i].abs() > tol.sqrt() * scale.sqrt().max(1.0) {
                return false;
            }
        }
        quad <= 1.0 + tol
    }

    /// Unit-ball coordinates `q = (Mᵀ)⁻¹(s − z)`; `‖q‖ ≤ 1` iff `s` is a
    /// member. Degenerate (zero-eigenvalue) directions are reported as an
    /// error naming how many there are.
    pub fn factor_coords(&self, s: &DVector<f64>) -> Result<DVector<f64>> {
        let scale = self.eigvals.max().max(1.0);
        let degenerate = self
            .eigvals
            .iter()
            .filter(|&&v| v <= 1e-12 * scale)
            .count();
        if degenerate > 0 {
            return Err(CoreError::DegenerateGeometry(format!(
                "factor is singular along {degenerate} direction(s)"
            )));
        }
        let y = self.eigvecs.transpose() * (s - &self.center);
        Ok(DVector::from_fn(y.len(), |i, _| y[i] / self.eigvals[i].sqrt()))
    }

    /// Reconstruct `s = z + Mᵀ q`.
    pub fn reconstruct(&self, q: &DVector<f64>) -> DVector<f64> {
        &self.center + self.factor.transpose() * q
    }

    /// Support function `h(v) = vᵀz + √(vᵀ(εP)v)`.
    pub fn support(&self, v: &DVector<f64>) -> Result<f64> {
        if v.norm() == 0.0 {
            return Err(CoreError::InvalidInput(
                "support direction must be nonzero".into(),
            ));
        }
        Ok(self.center.dot(v) + (&self.factor * v).norm())
    }

    /// The boundary point maximizing `vᵀs` over the ellipsoid.
    pub fn support_point(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        if v.norm() == 0.0 {
            return Err(CoreError::InvalidInput(
                "support direction must be nonzero".into(),
            ));
        }
        let mv = &self.factor * v;
        let norm = mv.norm();
        if norm <= 1e-300 {
            return Ok(self.center.clone());
        }
        Ok(&self.center + self.factor.transpose() * mv / norm)
    }
}

/// Level set of a Gaussian at the epsilon scale (alias constructor).
pub fn level_set(center: DVector<f64>, shape: DMatrix<f64>, epsilon: f64) -> Result<Ellipsoid> {
    Ellipsoid::new(center, shape, epsilon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use nalgebra::dvector;
    use rand::Rng;

    #[test]
    fn unit_shape_boundary_at_scaled_radius() {
        // P = I, ε = 4: points at Euclidean distance 2 are boundary members.
        let e = Ellipsoid::new(dvector![1.0, -1.0], DMatrix::identity(2, 2), 4.0).unwrap();
        let on_boundary = dvector![1.0 + 2.0, -1.0];
        assert!(e.contains(&on_boundary, 1e-9));
        let outside = dvector![1.0 + 2.0 + 1e-6, -1.0];
        assert!(!e.contains(&outside, 1e-9));
        let q = e.factor_coords(&on_boundary).unwrap();
        assert!((q.norm() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn doubling_epsilon_scales_factor_by_sqrt2() {
        let shape = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let e1 = Ellipsoid::new(dvector![0.0, 0.0], shape.clone(), 1.0).unwrap();
        let e2 = Ellipsoid::new(dvector![0.0, 0.0], shape, 2.0).unwrap();
        let ratio = e2.factor() / 2.0_f64.sqrt();
        assert!((ratio - e1.factor()).amax() < 1e-12);
    }

    #[test]
    fn center_maps_to_zero_coordinates() {
        let e = Ellipsoid::new(dvector![3.0, 4.0], DMatrix::identity(2, 2), 1.0).unwrap();
        let q = e.factor_coords(&dvector![3.0, 4.0]).unwrap();
        assert!(q.norm() < 1e-14);
    }

    #[test]
    fn membership_predicate_equals_factor_norm_condition() {
        let mut rng = substream(8, &[1]);
        let shape = DMatrix::from_row_slice(3, 3, &[2.0, 0.2, 0.0, 0.2, 1.0, 0.1, 0.0, 0.1, 0.5]);
        let e = Ellipsoid::new(dvector![0.5, -0.5, 0.0], shape, 1.7).unwrap();
        for _ in 0..1000 {
            let s = DVector::from_fn(3, |_, _| rng.random_range(-3.0..3.0));
            let q = e.factor_coords(&s).unwrap();
            assert_eq!(e.contains(&s, 1e-12), q.norm_squared() <= 1.0 + 1e-12);
            let back = e.reconstruct(&q);
            assert!((back - &s).amax() < 1e-10);
        }
    }

    #[test]
    fn singular_shape_membership_is_exact_on_null_directions() {
        // P = diag(1, 0): membership requires exact match on component 1.
        let shape = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let e = Ellipsoid::new(dvector![0.0, 2.0], shape, 1.0).unwrap();
        assert!(e.contains(&dvector![0.5, 2.0], 1e-9));
        assert!(!e.contains(&dvector![0.5, 2.1], 1e-9));
        assert!(e.factor_coords(&dvector![0.0, 2.0]).is_err());
    }

    #[test]
    fn factor_form_points_are_members() {
        // Sample w in the ball, map through s = z + Mᵀq: all members.
        let mut rng = substream(9, &[2]);
        let shape = DMatrix::from_row_slice(2, 2, &[1.5, -0.4, -0.4, 0.9]);
        let e = Ellipsoid::new(dvector![1.0, 1.0], shape, 2.41).unwrap();
        for _ in 0..1000 {
            let mut q = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
            if q.norm() > 1.0 {
                q /= q.norm() * 1.0001;
            }
            let s = e.reconstruct(&q);
            assert!(e.contains(&s, 1e-9));
        }
    }

    #[test]
    fn support_function_basics() {
        let e = Ellipsoid::new(dvector![2.0, 0.0], DMatrix::identity(2, 2), 1.0).unwrap();
        // Unit ball centered at (2, 0): h(e1) = 2 + 1.
        assert!((e.support(&dvector![1.0, 0.0]).unwrap() - 3.0).abs() < 1e-12);
        // Symmetry: h(v) − vᵀz = h(−v) + vᵀz.
        let v = dvector![0.6, -0.8];
        let hv = e.support(&v).unwrap();
        let hmv = e.support(&(-v.clone())).unwrap();
        let vz = v.dot(&e.center);
        assert!(((hv - vz) - (hmv + vz)).abs() < 1e-12);
        assert!(e.support(&dvector![0.0, 0.0]).is_err());
    }

    #[test]
    fn support_point_attains_support_value() {
        let shape = DMatrix::from_row_slice(2, 2, &[1.2, 0.3, 0.3, 0.7]);
        let e = Ellipsoid::new(dvector![0.3, -0.2], shape, 1.3).unwrap();
        let v = dvector![0.5, 1.1];
        let h = e.support(&v).unwrap();
        let p = e.support_point(&v).unwrap();
        assert!((v.dot(&p) - h).abs() < 1e-10);
        assert!(e.contains(&p, 1e-9));
    }

    #[test]
    fn asymmetric_shape_is_rejected() {
        let shape = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(Ellipsoid::new(dvector![0.0, 0.0], shape, 1.0).is_err());
    }
}
