//! Covariance propagation with linearization-error inflation.

use super::ellipsoid::lambda_max;
use super::{DynamicsModel, LipschitzBundle, Tube};
use crate::error::{CoreError, Result};
use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Closed-loop linearization `F = A + B·K` under the ancillary law.
pub fn closed_loop_matrix(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    k: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    if b.ncols() != k.nrows() || a.nrows() != b.nrows() || a.ncols() != k.ncols() {
        return Err(CoreError::DimensionMismatch {
            expected: b.ncols(),
            got: k.nrows(),
            context: "closed-loop matrix".into(),
        });
    }
    Ok(a + b * k)
}

fn assert_psd(p: &DMatrix<f64>, what: &str) -> Result<()> {
    let sym = (p + p.transpose()) * 0.5;
    let min_eig = SymmetricEigen::new(sym).eigenvalues.min();
    let scale = p.amax().max(1.0);
    if min_eig < -1e-8 * scale {
        return Err(CoreError::Numerical(format!(
            "{what} is not positive semidefinite (min eigenvalue {min_eig:.3e})"
        )));
    }
    Ok(())
}

/// Upper bound on the linearization error of one propagation step:
/// `e_max = (ε·ℓ_∇μ/2)(√λmax(P) + √λmax(KPKᵀ))² + ℓ_L·ε·√(λmax(P)+λmax(KPKᵀ))`.
pub fn lin_error_bound(
    p: &DMatrix<f64>,
    k: &DMatrix<f64>,
    epsilon: f64,
    lipschitz: &LipschitzBundle,
) -> Result<f64> {
    assert_psd(p, "covariance")?;
    if !(epsilon > 0.0) {
        return Err(CoreError::InvalidInput("epsilon must be positive".into()));
    }
    if lipschitz.grad_mu == 0.0 && lipschitz.noise_scale == 0.0 {
        return Ok(0.0);
    }
    let lam_p = lambda_max(p);
    let lam_k = lambda_max(&(k * p * k.transpose()));
    let sum_sqrt = lam_p.sqrt() + lam_k.sqrt();
    Ok(0.5 * epsilon * lipschitz.grad_mu * sum_sqrt * sum_sqrt
        + lipschitz.noise_scale * epsilon * (lam_p + lam_k).sqrt())
}

/// Minimal-trace outer ellipsoid covering the Minkowski sum of the
/// `εQ`-ellipsoid and the error ball of radius `e_max`:
/// `P = (1+β)Q + (1+1/β)(e_max²/ε)I` with `β = √(n·e_max²/(ε·tr Q))`.
///
/// Special cases: `e_max = 0` gives `P = Q`; `tr Q = 0` gives
/// `P = (e_max²/ε)·I`.
pub fn inflate_outer(q: &DMatrix<f64>, e_max: f64, epsilon: f64, n_s: usize) -> DMatrix<f64> {
    if e_max <= 0.0 {
        return q.clone();
    }
    let tr_q = q.trace();
    let err_term = e_max * e_max / epsilon;
    if tr_q <= f64::EPSILON * (n_s as f64) * err_term.max(1e-300) {
        return DMatrix::identity(n_s, n_s) * err_term;
    }
    let beta = (n_s as f64 * e_max * e_max / (epsilon * tr_q)).sqrt();
    q * (1.0 + beta) + DMatrix::identity(n_s, n_s) * ((1.0 + 1.0 / beta) * err_term)
}

/// Result of one propagation step.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub z_next: DVector<f64>,
    /// Inflated covariance P_{n+1}.
    pub p_next: DMatrix<f64>,
    /// Naive covariance Q_{n+1} = F P Fᵀ + Σ̄.
    pub q_next: DMatrix<f64>,
    /// Linearization error bound at the current step.
    pub e_max: f64,
    /// Certainty margin at the current step.
    pub margin: f64,
}

/// Propagate the tube state (z, P) one step under action `u` and ancillary
/// gain `k`.
pub fn propagate_step(
    model: &dyn DynamicsModel,
    z: &DVector<f64>,
    p: &DMatrix<f64>,
    u: &DVector<f64>,
    k: &DMatrix<f64>,
    epsilon: f64,
    lipschitz: &LipschitzBundle,
) -> Result<StepResult> {
    let n_s = model.state_dim();
    let (z_next, sigma_diag) = model.mean_and_aleatoric(z, u)?;
    if z_next.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::Numerical("model returned non-finite mean".into()));
    }
    let (a, b) = model.jacobians(z, u)?;
    let f = closed_loop_matrix(&a, &b, k)?;
    let mut q_next = &f * p * f.transpose() + DMatrix::from_diagonal(&sigma_diag);
    q_next = (&q_next + q_next.transpose()) * 0.5;
    let e_max = lin_error_bound(p, k, epsilon, lipschitz)?;
    let mut p_next = inflate_outer(&q_next, e_max, epsilon, n_s);
    p_next = (&p_next + p_next.transpose()) * 0.5;
    let margin = super::tighten::certainty_margin(p, k, epsilon, lipschitz.certainty)?;
    Ok(StepResult {
        z_next,
        p_next,
        q_next,
        e_max,
        margin,
    })
}

/// Build the full tube from `s_t` under the given open-loop actions and
/// ancillary gains (`P_0 = 0`).
pub fn build_tube(
    model: &dyn DynamicsModel,
    s_t: &DVector<f64>,
    actions: &[DVector<f64>],
    gains: &[DMatrix<f64>],
    epsilon: f64,
    lipschitz: &LipschitzBundle,
) -> Result<Tube> {
    lipschitz.validate()?;
    if actions.len() != gains.len() {
        return Err(CoreError::InvalidInput(format!(
            "need one gain per action: {} actions vs {} gains",
            actions.len(),
            gains.len()
        )));
    }
    let n_s = model.state_dim();
    let horizon = actions.len();
    let mut nominal = Vec::with_capacity(horizon + 1);
    let mut cov = Vec::with_capacity(horizon + 1);
    let mut naive = Vec::with_capacity(horizon + 1);
    let mut err_bounds = Vec::with_capacity(horizon);
    let mut margins = Vec::with_capacity(horizon);
    nominal.push(s_t.clone());
    cov.push(DMatrix::zeros(n_s, n_s));
    naive.push(DMatrix::zeros(n_s, n_s));
    for n in 0..horizon {
        let step = propagate_step(
            model,
            &nominal[n],
            &cov[n],
            &actions[n],
            &gains[n],
            epsilon,
            lipschitz,
        )
        .map_err(|e| CoreError::Propagation {
            step: n,
            message: e.to_string(),
        })?;
        nominal.push(step.z_next);
        cov.push(step.p_next);
        naive.push(step.q_next);
        err_bounds.push(step.e_max);
        margins.push(step.margin);
    }
    Ok(Tube {
        nominal,
        actions: actions.to_vec(),
        cov,
        naive_cov: naive,
        gains: gains.to_vec(),
        err_bounds,
        margins,
        epsilon,
    })
}
