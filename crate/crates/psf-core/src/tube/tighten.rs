//! Constraint tightening by ellipsoid support functions.

use super::ellipsoid::lambda_max;
use crate::env::BoxSet;
use crate::error::{CoreError, Result};
use nalgebra::{DMatrix, DVector};

/// A box shrunk by per-facet support margins. `empty` flags lo > hi on some
/// dimension; this is a legitimate outcome, not an error.
#[derive(Debug, Clone)]
pub struct TightenedBox {
    pub lo: DVector<f64>,
    pub hi: DVector<f64>,
    pub empty: bool,
}

impl TightenedBox {
    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        !self.empty
            && x.iter()
                .zip(self.lo.iter().zip(self.hi.iter()))
                .all(|(v, (l, h))| *v >= *l - tol && *v <= *h + tol)
    }

    /// Signed worst facet margin of `x`: positive when some bound is
    /// violated, negative when strictly interior.
    pub fn violation(&self, x: &DVector<f64>) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for i in 0..x.len() {
            worst = worst.max(self.lo[i] - x[i]).max(x[i] - self.hi[i]);
        }
        worst
    }
}

/// Tighten each facet `aᵀx ≤ b` of the box to `aᵀz ≤ b − ‖M a‖₂`, where `M`
/// is the ellipsoid factor. For axis-aligned facets the margin per dimension
/// is the norm of the corresponding column of `M`.
pub fn tighten_box(b: &BoxSet, m: &DMatrix<f64>) -> TightenedBox {
    let dim = b.dim();
    let mut lo = b.lo.clone();
    let mut hi = b.hi.clone();
    let mut empty = false;
    for d in 0..dim {
        let margin = m.column(d).norm();
        lo[d] += margin;
        hi[d] -= margin;
        if lo[d] > hi[d] {
            empty = true;
        }
    }
    TightenedBox { lo, hi, empty }
}

/// Tighten the action box for the ancillary law `v = u + K(s − z)`: the
/// feedback image of the state ellipsoid is `K Mᵀ 𝔔`, so each facet margin
/// is `‖M Kᵀ a‖₂`.
pub fn tighten_action_box(b: &BoxSet, k: &DMatrix<f64>, m: &DMatrix<f64>) -> TightenedBox {
    let dim = b.dim();
    let mkt = m * k.transpose();
    let mut lo = b.lo.clone();
    let mut hi = b.hi.clone();
    let mut empty = false;
    for d in 0..dim {
        let margin = mkt.column(d).norm();
        lo[d] += margin;
        hi[d] -= margin;
        if lo[d] > hi[d] {
            empty = true;
        }
    }
    TightenedBox { lo, hi, empty }
}

/// Tightened offset of a general halfspace `aᵀx ≤ b`.
pub fn tighten_halfspace(normal: &DVector<f64>, offset: f64, m: &DMatrix<f64>) -> f64 {
    offset - (m * normal).norm()
}

/// Certainty-constraint margin `g = ℓ_G·√(ε(λmax(P) + λmax(KPKᵀ)))`.
pub fn certainty_margin(
    p: &DMatrix<f64>,
    k: &DMatrix<f64>,
    epsilon: f64,
    ell_g: f64,
) -> Result<f64> {
    if ell_g < 0.0 {
        return Err(CoreError::InvalidInput(
            "certainty Lipschitz constant must be nonnegative".into(),
        ));
    }
    if ell_g == 0.0 {
        return Ok(0.0);
    }
    let lam_p = lambda_max(p);
    let lam_k = lambda_max(&(k * p * k.transpose()));
    Ok(ell_g * (epsilon * (lam_p + lam_k)).sqrt())
}
