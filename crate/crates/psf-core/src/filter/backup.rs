//! Infeasibility backup: replay the stored feasible plan, then pass through.

use super::FilterSolution;
use crate::env::BoxSet;
use nalgebra::{DMatrix, DVector};

/// The plan stored at the last feasible solve.
#[derive(Debug, Clone)]
pub struct StoredPlan {
    pub nominal: Vec<DVector<f64>>,
    pub actions: Vec<DVector<f64>>,
    pub gains: Vec<DMatrix<f64>>,
}

/// Consecutive-infeasibility counter plus the stored plan.
#[derive(Debug, Clone)]
pub struct BackupState {
    pub n_inf: usize,
    pub horizon: usize,
    pub stored: Option<StoredPlan>,
}

impl BackupState {
    /// Before the first feasible solve the counter sits at N−1, so the raw
    /// action passes through until a plan exists.
    pub fn new(horizon: usize) -> Self {
        Self {
            n_inf: horizon.saturating_sub(1),
            horizon,
            stored: None,
        }
    }
}

/// Where the applied action came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AppliedSource {
    /// First action of a fresh feasible plan.
    Filtered,
    /// Stored plan replayed at the contained offset.
    Backup(usize),
    /// Raw action passed through (plan exhausted or absent).
    Passthrough,
}

/// Select the applied action given the solve outcome at the current step.
///
/// A feasible solution resets the counter and stores the plan. Otherwise the
/// stored plan is replayed with ancillary correction at increasing offsets;
/// once `N−1` consecutive steps have been infeasible the raw action is
/// applied. Every branch clamps to the action box.
pub fn apply_backup_policy(
    s_t: &DVector<f64>,
    a_t: &DVector<f64>,
    feasible: Option<&FilterSolution>,
    backup: &mut BackupState,
    action_box: &BoxSet,
) -> (DVector<f64>, AppliedSource) {
    if let Some(sol) = feasible {
        backup.n_inf = 0;
        backup.stored = Some(StoredPlan {
            nominal: sol.tube.nominal.clone(),
            actions: sol.actions.clone(),
            gains: sol.tube.gains.clone(),
        });
        return (action_box.clamp(&sol.actions[0]), AppliedSource::Filtered);
    }
    if backup.n_inf < backup.horizon.saturating_sub(1) {
        if let Some(plan) = &backup.stored {
            backup.n_inf += 1;
            let k = backup.n_inf;
            let corrected =
                &plan.actions[k] + &plan.gains[k] * (s_t - &plan.nominal[k]);
            return (action_box.clamp(&corrected), AppliedSource::Backup(k));
        }
        backup.n_inf += 1;
    }
    (action_box.clamp(a_t), AppliedSource::Passthrough)
}

/// Receding-horizon warm start: shift the previous action sequence by one
/// and repeat the final action.
pub fn warm_start_shift(previous: &[DVector<f64>]) -> Vec<DVector<f64>> {
    if previous.is_empty() {
        return Vec::new();
    }
    let mut shifted: Vec<DVector<f64>> = previous[1..].to_vec();
    shifted.push(previous[previous.len() - 1].clone());
    shifted
}
