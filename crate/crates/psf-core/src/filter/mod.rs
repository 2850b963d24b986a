//! Predictive safety filtering.
//!
//! The filter solves, at every control step, a soft-constrained program:
//! stay as close as possible to the requested action while the propagated
//! reachable tube satisfies tightened state constraints, reaches the
//! terminal set, and keeps the nominal trajectory inside the certain set.
//! Action bounds are hard. Infeasible steps fall back to replaying the last
//! stored feasible plan under ancillary feedback, and to the raw action once
//! the plan is exhausted.

mod backup;
mod solve;

pub use backup::{apply_backup_policy, warm_start_shift, AppliedSource, BackupState, StoredPlan};
pub use solve::solve;

use crate::env::{dlqr, ConstraintSets};
use crate::error::{CoreError, Result};
use crate::termset::TerminalSet;
use crate::tube::{DynamicsModel, LipschitzBundle, Tube};
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainsPolicy {
    /// No ancillary feedback (open-loop tube).
    Zero,
    /// One LQR gain computed from the model linearization at the current
    /// state, reused along the horizon. Falls back to zero gains when the
    /// Riccati iteration fails.
    LqrAtState,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct FilterConfig {
    pub horizon: usize,
    pub epsilon: f64,
    /// Certainty level ξ.
    pub xi: f64,
    pub lipschitz: LipschitzBundle,
    pub penalty_state: f64,
    pub penalty_certainty: f64,
    pub penalty_terminal: f64,
    /// Convergence tolerance on the subproblem step norm.
    pub kkt_tol: f64,
    pub max_iters: usize,
    /// Feasibility threshold on the exact constraint slacks.
    pub slack_tol: f64,
    pub gains_policy: GainsPolicy,
    /// Central finite-difference step for certainty derivatives.
    pub fd_step: f64,
    /// Initial trust-region radius on action updates.
    pub trust_init: f64,
    /// Quadratic damping on the step.
    pub damping: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            horizon: 10,
            epsilon: 2.41,
            xi: 0.9,
            lipschitz: LipschitzBundle::ZERO,
            penalty_state: 1e4,
            penalty_certainty: 1e4,
            penalty_terminal: 1e4,
            kkt_tol: 1e-6,
            max_iters: 40,
            slack_tol: 1e-6,
            gains_policy: GainsPolicy::Zero,
            fd_step: 1e-5,
            trust_init: 0.5,
            damping: 1e-3,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 {
            return Err(CoreError::Config("horizon must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.xi) {
            return Err(CoreError::Config("xi must lie in [0,1]".into()));
        }
        if self.penalty_state <= 0.0 || self.penalty_certainty <= 0.0 || self.penalty_terminal <= 0.0
        {
            return Err(CoreError::Config("slack penalties must be positive".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(CoreError::Config("epsilon must be positive".into()));
        }
        self.lipschitz.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterStatus {
    /// All slacks within tolerance; plan certified against the model.
    Feasible,
    /// Converged but some soft constraint is violated beyond tolerance.
    SoftFeasible,
    /// No implementable plan (empty tightened action box or solver failure).
    Infeasible,
}

/// A fully specified filtering problem instance.
pub struct FilterProblem<'a> {
    pub model: &'a dyn DynamicsModel,
    pub s_t: DVector<f64>,
    pub a_t: DVector<f64>,
    pub constraints: &'a ConstraintSets,
    pub terminal: &'a TerminalSet,
    pub config: &'a FilterConfig,
    /// Per-step ancillary gains resolved from the gains policy.
    pub gains: Vec<DMatrix<f64>>,
}

/// Assemble and validate a filtering problem at (s_t, a_t).
pub fn build_problem<'a>(
    model: &'a dyn DynamicsModel,
    s_t: DVector<f64>,
    a_t: DVector<f64>,
    constraints: &'a ConstraintSets,
    terminal: &'a TerminalSet,
    config: &'a FilterConfig,
) -> Result<FilterProblem<'a>> {
    config.validate()?;
    let n_s = model.state_dim();
    let n_a = model.action_dim();
    if s_t.len() != n_s {
        return Err(CoreError::DimensionMismatch {
            expected: n_s,
            got: s_t.len(),
            context: "filter state".into(),
        });
    }
    if a_t.len() != n_a {
        return Err(CoreError::DimensionMismatch {
            expected: n_a,
            got: a_t.len(),
            context: "filter action".into(),
        });
    }
    if constraints.state.dim() != n_s || constraints.action.dim() != n_a {
        return Err(CoreError::DimensionMismatch {
            expected: n_s,
            got: constraints.state.dim(),
            context: "constraint sets".into(),
        });
    }
    if terminal.facets.is_empty() {
        return Err(CoreError::InvalidInput("terminal set has no facets".into()));
    }
    if terminal.dim() != n_s {
        return Err(CoreError::DimensionMismatch {
            expected: n_s,
            got: terminal.dim(),
            context: "terminal set".into(),
        });
    }
    let gains = match config.gains_policy {
        GainsPolicy::Zero => vec![DMatrix::zeros(n_a, n_s); config.horizon],
        GainsPolicy::LqrAtState => {
            let mid = constraints.action.center();
            let (a, b) = model.jacobians(&s_t, &mid)?;
            let gain = dlqr(
                &a,
                &b,
                &DMatrix::identity(n_s, n_s),
                &DMatrix::identity(n_a, n_a),
                50_000,
                1e-10,
            )
            .map(|k| -k)
            .unwrap_or_else(|_| DMatrix::zeros(n_a, n_s));
            vec![gain; config.horizon]
        }
    };
    Ok(FilterProblem {
        model,
        s_t,
        a_t,
        constraints,
        terminal,
        config,
        gains,
    })
}

/// Solution of one filtering problem.
#[derive(Debug, Clone)]
pub struct FilterSolution {
    pub actions: Vec<DVector<f64>>,
    pub tube: Tube,
    pub slack_state: f64,
    pub slack_certainty: f64,
    pub slack_terminal: f64,
    /// `‖u₀ − a_t‖₂` at the solution.
    pub objective: f64,
    pub status: FilterStatus,
    pub iterations: usize,
    pub kkt_residual: f64,
}

impl FilterSolution {
    pub fn max_slack(&self) -> f64 {
        self.slack_state
            .max(self.slack_certainty)
            .max(self.slack_terminal)
    }

    pub fn is_feasible(&self) -> bool {
        self.status == FilterStatus::Feasible
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Environment, Pendulum};
    use crate::termset::{Facet, FitMethod};
    use crate::tube::ExactModel;
    use nalgebra::dvector;

    fn tiny_terminal(dim: usize) -> TerminalSet {
        let mut facets = Vec::new();
        for d in 0..dim {
            let mut up = DVector::zeros(dim);
            up[d] = 1.0;
            facets.push(Facet {
                normal: up.clone(),
                offset: 10.0,
            });
            facets.push(Facet {
                normal: -up,
                offset: 10.0,
            });
        }
        TerminalSet {
            facets,
            method: FitMethod::Polytope,
            generation: 0,
            seeds: vec![],
            ellipsoid_scale_sq: None,
        }
    }

    #[test]
    fn build_problem_checks_dimensions() {
        let env = Pendulum::new(2.41);
        let model = ExactModel::new(&env);
        let config = FilterConfig::default();
        let terminal = tiny_terminal(2);
        // Wrong state dimension.
        assert!(build_problem(
            &model,
            dvector![0.0],
            dvector![0.0],
            env.constraints(),
            &terminal,
            &config,
        )
        .is_err());
        // Wrong terminal dimension.
        let terminal3 = tiny_terminal(3);
        assert!(build_problem(
            &model,
            dvector![3.0, 0.0],
            dvector![0.0],
            env.constraints(),
            &terminal3,
            &config,
        )
        .is_err());
        // Horizon 1 still builds (single-step problem).
        let mut cfg1 = config.clone();
        cfg1.horizon = 1;
        assert!(build_problem(
            &model,
            dvector![3.0, 0.0],
            dvector![0.0],
            env.constraints(),
            &terminal,
            &cfg1,
        )
        .is_ok());
    }

    #[test]
    fn invalid_config_is_rejected() {
        let mut cfg = FilterConfig::default();
        cfg.xi = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg2 = FilterConfig::default();
        cfg2.horizon = 0;
        assert!(cfg2.validate().is_err());
        let mut cfg3 = FilterConfig::default();
        cfg3.penalty_state = 0.0;
        assert!(cfg3.validate().is_err());
    }
}
