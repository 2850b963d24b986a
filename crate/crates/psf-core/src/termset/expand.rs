//! Terminal-set expansion from recorded solutions and the initial estimate.

use super::fit::{fit_ellipsoid, fit_polytope, FitOptions};
use super::knn::knn_outlier_filter;
use super::{FitMethod, SolutionRecord, TerminalSet};
use crate::env::{collect_transitions, Environment, InitialController};
use crate::ensemble::TransitionDataset;
use crate::error::{CoreError, Result};
use nalgebra::DVector;

#[derive(Debug, Clone)]
pub struct ExpandParams {
    pub knn_k: usize,
    pub knn_keep_quantile: f64,
    /// Cap on the point count entering the kNN filter and the fit.
    pub max_fit_points: usize,
    /// Cap on new seed points archived per generation.
    pub max_new_seeds: usize,
    pub fit: FitOptions,
    pub prob_level: f64,
}

impl Default for ExpandParams {
    fn default() -> Self {
        Self {
            knn_k: 10,
            knn_keep_quantile: 0.95,
            max_fit_points: 3000,
            max_new_seeds: 512,
            fit: FitOptions::default(),
            prob_level: 0.7,
        }
    }
}

/// What happened during one expansion attempt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExpandOutcome {
    /// The refit grew the set; a new generation was produced.
    Expanded,
    /// Archive was empty; set unchanged.
    EmptyArchive,
    /// Refit succeeded but failed to cover previous seeds; previous set kept.
    RetainedShrunk,
    /// Fit failed (degenerate geometry); previous set kept.
    RetainedFitFailure(String),
}

fn stride_sample(points: &[DVector<f64>], cap: usize) -> Vec<DVector<f64>> {
    if points.len() <= cap {
        return points.to_vec();
    }
    let stride = points.len() as f64 / cap as f64;
    (0..cap)
        .map(|i| points[(i as f64 * stride) as usize].clone())
        .collect()
}

fn run_fit(
    points: &[DVector<f64>],
    method: FitMethod,
    params: &ExpandParams,
) -> Result<TerminalSet> {
    match method {
        FitMethod::Polytope => fit_polytope(points, &params.fit),
        FitMethod::Ellipsoid => fit_ellipsoid(points, params.prob_level, &params.fit),
    }
}

/// Expand the terminal set from archived feasible solutions.
///
/// The candidate cloud is the archived initial states, the nominal tube
/// states of those solutions, and the current seed archive. After outlier
/// filtering and a convex refit, the new set is accepted only if it still
/// covers every previous seed point; otherwise the previous set is retained
/// unchanged. Seeds accumulate across generations so the cover check spans
/// all prior generations.
pub fn expand(
    current: &TerminalSet,
    archive: &[SolutionRecord],
    state_box: &crate::env::BoxSet,
    params: &ExpandParams,
) -> (TerminalSet, ExpandOutcome) {
    if archive.is_empty() {
        return (current.clone(), ExpandOutcome::EmptyArchive);
    }
    let mut new_points: Vec<DVector<f64>> = Vec::new();
    for rec in archive {
        new_points.push(rec.z0.clone());
        new_points.extend(rec.tube_centers.iter().cloned());
    }
    let new_points = stride_sample(&new_points, params.max_fit_points);

    // Seed support set: the seeds extreme along the current facet directions
    // plus a stride sample. These are trusted points from earlier
    // generations; they skip the outlier filter and rejoin before the fit so
    // a refit cannot lose support anywhere it already had it.
    let mut seed_support: Vec<DVector<f64>> = Vec::new();
    if !current.seeds.is_empty() {
        for facet in &current.facets {
            if let Some(best) = current.seeds.iter().max_by(|a, b| {
                facet
                    .normal
                    .dot(a)
                    .partial_cmp(&facet.normal.dot(b))
                    .unwrap()
            }) {
                seed_support.push(best.clone());
            }
        }
        seed_support.extend(stride_sample(&current.seeds, 500));
    }

    let mut combined = new_points;
    combined.extend(seed_support.iter().cloned());
    let (mut kept, _warned) =
        knn_outlier_filter(&combined, params.knn_k, params.knn_keep_quantile);
    kept.extend(seed_support);
    let mut candidate = match run_fit(&kept, current.method, params) {
        Ok(set) => set,
        Err(e) => {
            return (
                current.clone(),
                ExpandOutcome::RetainedFitFailure(e.to_string()),
            )
        }
    };
    candidate.intersect_box(state_box);

    // Monotone-growth guard: all previous seeds must remain covered.
    let covered = current.seeds.iter().all(|s| candidate.contains(s, 1e-9));
    if !covered {
        return (current.clone(), ExpandOutcome::RetainedShrunk);
    }

    candidate.generation = current.generation + 1;
    candidate.seeds = current.seeds.clone();
    candidate
        .seeds
        .extend(stride_sample(&kept, params.max_new_seeds));
    (candidate, ExpandOutcome::Expanded)
}

/// Estimate the initial terminal set by rolling out the initial controller
/// from the reset region and fitting the visited-state cloud.
///
/// Every visited state must satisfy the state constraints; a violating
/// rollout means the controller is not safe and construction fails.
pub fn initial_terminal_set(
    env: &dyn Environment,
    controller: &InitialController,
    rollout_budget: usize,
    episode_len: usize,
    method: FitMethod,
    params: &ExpandParams,
    seed: u64,
) -> Result<TerminalSet> {
    let mut dataset = TransitionDataset::new(env.state_dim(), env.action_dim());
    let visited = collect_transitions(
        env,
        controller,
        rollout_budget,
        episode_len,
        seed,
        &mut dataset,
    )?;
    for (i, s) in visited.iter().enumerate() {
        if !env.constraints().state.contains(s) {
            return Err(CoreError::UnsafeConstruction(format!(
                "initial controller left the state constraints at visited state {i}"
            )));
        }
    }
    let fit_points = stride_sample(&visited, params.max_fit_points);
    let mut set = run_fit(&fit_points, method, params)?;
    set.intersect_box(&env.constraints().state);
    set.generation = 0;
    set.seeds = stride_sample(&visited, params.max_new_seeds.max(1024));
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{dlqr, BoxSet, Pendulum};
    use crate::env::{Cartpole, Environment};
    use nalgebra::{dvector, DMatrix};

    fn square_set(half: f64) -> TerminalSet {
        let pts = vec![
            dvector![-half, -half],
            dvector![half, -half],
            dvector![half, half],
            dvector![-half, half],
        ];
        let mut set = fit_polytope(&pts, &FitOptions::default()).unwrap();
        set.seeds = pts;
        set
    }

    fn record_at(z0: DVector<f64>) -> SolutionRecord {
        SolutionRecord {
            tube_centers: vec![z0.clone()],
            z0,
            max_slack: 0.0,
            step: 0,
            episode_len: 200,
        }
    }

    fn wide_box() -> BoxSet {
        BoxSet::new(dvector![-100.0, -100.0], dvector![100.0, 100.0]).unwrap()
    }

    #[test]
    fn empty_archive_leaves_set_unchanged() {
        let set = square_set(1.0);
        let (out, outcome) = expand(&set, &[], &wide_box(), &ExpandParams::default());
        assert_eq!(outcome, ExpandOutcome::EmptyArchive);
        assert_eq!(out.facets.len(), set.facets.len());
        assert_eq!(out.generation, set.generation);
    }

    #[test]
    fn interior_archive_keeps_set_within_tolerance() {
        let set = square_set(1.0);
        // A small cloud strictly inside the current square.
        let archive: Vec<SolutionRecord> = (0..30)
            .map(|i| {
                let a = i as f64 / 30.0 * std::f64::consts::TAU;
                record_at(dvector![0.3 * a.cos(), 0.3 * a.sin()])
            })
            .collect();
        let (out, outcome) = expand(&set, &archive, &wide_box(), &ExpandParams::default());
        match outcome {
            ExpandOutcome::Expanded => {
                // Refit must still cover the old square's seeds and cannot be
                // larger than the old square by more than facet tolerance;
                // its radius cannot shrink.
                for s in &set.seeds {
                    assert!(out.contains(s, 1e-9));
                }
                assert!(out.chebyshev_radius().unwrap() >= set.chebyshev_radius().unwrap() - 1e-9);
            }
            ExpandOutcome::RetainedShrunk => {
                assert_eq!(out.generation, set.generation);
            }
            other => panic!("unexpected outcome {other:?}"),
        }
    }

    #[test]
    fn axis_extension_grows_chebyshev_radius() {
        let set = square_set(1.0);
        let mut archive = Vec::new();
        // A wide grid of solutions past the +x face; the union's inscribed
        // ball is strictly larger than the original square's.
        for i in 0..8 {
            for j in 0..8 {
                let x = 1.0 + i as f64 * (2.0 / 7.0);
                let y = -1.5 + j as f64 * (3.0 / 7.0);
                archive.push(record_at(dvector![x, y]));
            }
        }
        let r0 = set.chebyshev_radius().unwrap();
        let (out, outcome) = expand(&set, &archive, &wide_box(), &ExpandParams::default());
        assert_eq!(outcome, ExpandOutcome::Expanded);
        let r1 = out.chebyshev_radius().unwrap();
        assert!(r1 > r0 + 0.05, "radius should grow: {r0} → {r1}");
        assert_eq!(out.generation, 1);
        for s in &set.seeds {
            assert!(out.contains(s, 1e-9));
        }
    }

    #[test]
    fn pendulum_random_controller_stays_near_bottom() {
        let env = Pendulum::new(2.41);
        let set = initial_terminal_set(
            &env,
            &InitialController::UniformRandom,
            4096,
            200,
            FitMethod::Polytope,
            &ExpandParams::default(),
            7,
        )
        .unwrap();
        // The random controller cannot swing up: the set stays away from the
        // upright position.
        let upright = env.goal();
        assert!(!set.contains(&upright, 1e-9));
        let (center, radius) = set.chebyshev().unwrap();
        assert!(radius > 0.0);
        assert!((center[0] - std::f64::consts::PI).abs() < 1.0);
    }

    #[test]
    fn cartpole_noisy_lqr_builds_compact_set() {
        let env = Cartpole::new(9.59);
        // Stabilize around the reset region, not the exploration goal.
        let origin = env.initial_box().center();
        let (a, b) = env.jacobians(&origin, &dvector![0.0]);
        let gain = dlqr(
            &a,
            &b,
            &DMatrix::identity(4, 4),
            &DMatrix::from_element(1, 1, 0.1),
            100_000,
            1e-12,
        )
        .unwrap();
        let ctrl = InitialController::LqrNoisy {
            gain,
            set_point: origin.clone(),
            noise_std: 0.2,
        };
        let params = ExpandParams {
            fit: FitOptions {
                directions: 64,
                ..Default::default()
            },
            ..Default::default()
        };
        let set = initial_terminal_set(
            &env,
            &ctrl,
            8192,
            200,
            FitMethod::Polytope,
            &params,
            11,
        )
        .unwrap();
        assert!(set.contains(&origin, 1e-9));
        // Compact: does not reach the state-box corners.
        assert!(!set.contains(&dvector![3.9, 9.9, 2.0 * std::f64::consts::PI, 7.9], 1e-9));
    }

    #[test]
    fn unsafe_controller_is_rejected() {
        let env = Pendulum::new(2.41);
        // Positive velocity feedback pumps energy into the swing until the
        // angle or rate leaves the constraint box.
        let ctrl = InitialController::LqrNoisy {
            gain: DMatrix::from_row_slice(1, 2, &[0.0, -5.0]),
            set_point: dvector![std::f64::consts::PI, 0.0],
            noise_std: 0.0,
        };
        let err = initial_terminal_set(
            &env,
            &ctrl,
            4096,
            200,
            FitMethod::Polytope,
            &ExpandParams::default(),
            3,
        );
        assert!(matches!(err, Err(CoreError::UnsafeConstruction(_))));
    }
}
