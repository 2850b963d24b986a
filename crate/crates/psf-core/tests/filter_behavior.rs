//! Closed-loop behavior of the safety filter on the pendulum with the
//! exact dynamics model: feasibility, minimal deviation, backup logic, and
//! the Monte Carlo violation oracle.

use nalgebra::{dvector, DMatrix, DVector};
use psf_core::env::{Environment, InitialController, Pendulum};
use psf_core::filter::{
    apply_backup_policy, build_problem, solve, warm_start_shift, AppliedSource, BackupState,
    FilterConfig, FilterStatus,
};
use psf_core::rng::{purpose, substream};
use psf_core::termset::{initial_terminal_set, ExpandParams, FitMethod, TerminalSet};
use psf_core::tube::{build_tube, tighten_box, DynamicsModel, ExactModel};

fn pendulum_terminal_set(env: &Pendulum) -> TerminalSet {
    initial_terminal_set(
        env,
        &InitialController::UniformRandom,
        4096,
        200,
        FitMethod::Polytope,
        &ExpandParams::default(),
        1234,
    )
    .expect("initial terminal set")
}

fn pendulum_config() -> FilterConfig {
    FilterConfig {
        horizon: 10,
        epsilon: 2.41,
        xi: 0.9,
        ..Default::default()
    }
}

#[test]
fn feasible_from_rest_at_bottom_with_zero_request() {
    let env = Pendulum::new(2.41);
    let model = ExactModel::new(&env);
    let terminal = pendulum_terminal_set(&env);
    let config = pendulum_config();
    let s = dvector![std::f64::consts::PI, 0.0];
    let a = dvector![0.0];
    let problem =
        build_problem(&model, s, a, env.constraints(), &terminal, &config).unwrap();
    let sol = solve(&problem, None).unwrap();
    assert_eq!(sol.status, FilterStatus::Feasible, "slacks: {:?}", sol.max_slack());
    assert!(sol.objective <= 1e-6, "objective {}", sol.objective);
}

#[test]
fn feasible_solution_survives_independent_reverification() {
    let env = Pendulum::new(2.41);
    let model = ExactModel::new(&env);
    let terminal = pendulum_terminal_set(&env);
    let config = pendulum_config();
    let s = dvector![std::f64::consts::PI - 0.2, 0.4];
    let a = dvector![0.5];
    let problem =
        build_problem(&model, s.clone(), a, env.constraints(), &terminal, &config).unwrap();
    let sol = solve(&problem, None).unwrap();
    assert_eq!(sol.status, FilterStatus::Feasible);

    // Rebuild the tube from the returned actions and re-check every
    // tightened constraint from scratch.
    let tube = build_tube(
        &model,
        &s,
        &sol.actions,
        &problem.gains,
        config.epsilon,
        &config.lipschitz,
    )
    .unwrap();
    for n in 0..config.horizon {
        let ell = tube.ellipsoid(n).unwrap();
        let tb = tighten_box(&env.constraints().state, ell.factor());
        assert!(
            tb.violation(&tube.nominal[n]) <= 1e-6,
            "state constraint at step {n}"
        );
        assert!(env.constraints().action.contains(&sol.actions[n]));
        let cert = model.certainty(&tube.nominal[n], &sol.actions[n]).unwrap();
        assert!(cert + 1e-12 >= config.xi);
    }
    let ell_n = tube.ellipsoid(config.horizon).unwrap();
    for f in &terminal.facets {
        let margin = (ell_n.factor() * &f.normal).norm();
        assert!(
            f.normal.dot(&tube.nominal[config.horizon]) <= f.offset - margin + 1e-6,
            "terminal facet violated"
        );
    }
}

#[test]
fn requested_action_is_returned_when_itself_feasible() {
    // Construct (s, a_t) pairs verified feasible by a candidate-plan check,
    // then require ‖u₀ − a_t‖ ≤ 1e-4.
    let env = Pendulum::new(2.41);
    let model = ExactModel::new(&env);
    let terminal = pendulum_terminal_set(&env);
    let config = pendulum_config();
    let mut rng = substream(5, &[purpose::MONTE_CARLO, 77]);
    use rand::Rng;
    let mut tested = 0;
    let mut attempts = 0;
    while tested < 20 && attempts < 400 {
        attempts += 1;
        let s = dvector![
            std::f64::consts::PI + rng.random_range(-0.3..0.3),
            rng.random_range(-0.5..0.5)
        ];
        let a_t = dvector![rng.random_range(-0.5..0.5_f64)];
        // Candidate plan: requested action once, then zero torque.
        let mut cand = vec![dvector![0.0]; config.horizon];
        cand[0] = a_t.clone();
        let gains = vec![DMatrix::zeros(1, 2); config.horizon];
        let tube = build_tube(&model, &s, &cand, &gains, config.epsilon, &config.lipschitz)
            .unwrap();
        let mut ok = true;
        for n in 0..config.horizon {
            let ell = tube.ellipsoid(n).unwrap();
            let tb = tighten_box(&env.constraints().state, ell.factor());
            if tb.violation(&tube.nominal[n]) > -1e-4 {
                ok = false;
            }
        }
        let ell_n = tube.ellipsoid(config.horizon).unwrap();
        for f in &terminal.facets {
            let margin = (ell_n.factor() * &f.normal).norm();
            if f.normal.dot(&tube.nominal[config.horizon]) > f.offset - margin - 1e-4 {
                ok = false;
            }
        }
        if !ok {
            continue;
        }
        tested += 1;
        let problem = build_problem(
            &model,
            s,
            a_t.clone(),
            env.constraints(),
            &terminal,
            &config,
        )
        .unwrap();
        let sol = solve(&problem, None).unwrap();
        assert_eq!(sol.status, FilterStatus::Feasible);
        assert!(
            (&sol.actions[0] - &a_t).norm() <= 1e-4,
            "filter deviated: requested {:?}, got {:?}",
            a_t,
            sol.actions[0]
        );
    }
    assert!(tested >= 20, "only {tested} feasible cases found");
}

#[test]
fn unsafe_request_near_bound_is_corrected() {
    // Close to the lower angle bound, pushing further must be filtered; the
    // Monte Carlo violation rate under the filtered plan must be strictly
    // lower than under the raw action.
    let env = Pendulum::new(2.41);
    let model = ExactModel::new(&env);
    let terminal = pendulum_terminal_set(&env);
    let config = pendulum_config();
    // At this state a maximal recovery torque still saves the angle bound,
    // but pushing with the requested torque first makes the crossing
    // unavoidable.
    let theta_lo = env.constraints().state.lo[0];
    let s = dvector![theta_lo + 0.14, -2.6];
    let a_t = dvector![-2.0];
    let problem = build_problem(
        &model,
        s.clone(),
        a_t.clone(),
        env.constraints(),
        &terminal,
        &config,
    )
    .unwrap();
    let sol = solve(&problem, None).unwrap();
    assert!(
        (&sol.actions[0] - &a_t).norm() > 1e-3,
        "filter should modify an unsafe request"
    );

    // Violation oracle: roll the true environment for a few steps under the
    // filtered plan vs. the raw action held constant.
    let horizon = 5;
    let count = 1000;
    let mut violations_filtered = 0usize;
    let mut violations_raw = 0usize;
    for traj in 0..count {
        let mut rng_f = substream(99, &[purpose::MONTE_CARLO, traj]);
        let mut rng_r = substream(99, &[purpose::MONTE_CARLO, traj]);
        let mut sf = s.clone();
        let mut sr = s.clone();
        let mut viol_f = false;
        let mut viol_r = false;
        for n in 0..horizon {
            sf = env.step(&sf, &sol.actions[n], &mut rng_f).unwrap();
            sr = env.step(&sr, &a_t, &mut rng_r).unwrap();
            viol_f |= !env.constraints().state.contains(&sf);
            viol_r |= !env.constraints().state.contains(&sr);
        }
        violations_filtered += viol_f as usize;
        violations_raw += viol_r as usize;
    }
    assert!(
        violations_filtered < violations_raw,
        "filtered {violations_filtered} vs raw {violations_raw}"
    );
    assert!(violations_raw > 0, "scenario must actually be dangerous");
}

#[test]
fn scripted_backup_sequence_follows_the_scheme() {
    // Build one genuine feasible solution, then script the feasibility
    // pattern F, I, I, ..., I (N−1 times), I and check each applied action.
    let env = Pendulum::new(2.41);
    let model = ExactModel::new(&env);
    let terminal = pendulum_terminal_set(&env);
    let config = FilterConfig {
        horizon: 4,
        epsilon: 2.41,
        xi: 0.9,
        ..Default::default()
    };
    let s0 = dvector![std::f64::consts::PI, 0.0];
    let a_req = dvector![0.3];
    let problem = build_problem(
        &model,
        s0.clone(),
        a_req.clone(),
        env.constraints(),
        &terminal,
        &config,
    )
    .unwrap();
    let sol = solve(&problem, None).unwrap();
    assert_eq!(sol.status, FilterStatus::Feasible);

    let action_box = env.constraints().action.clone();
    let mut backup = BackupState::new(config.horizon);

    // Before any feasible solve: passthrough.
    let (a, src) = apply_backup_policy(&s0, &dvector![0.9], None, &mut backup, &action_box);
    assert_eq!(src, AppliedSource::Passthrough);
    assert_eq!(a, dvector![0.9]);

    // Feasible step: applied = u*₀ and the counter resets.
    let (a, src) = apply_backup_policy(&s0, &a_req, Some(&sol), &mut backup, &action_box);
    assert_eq!(src, AppliedSource::Filtered);
    assert_eq!(a, action_box.clamp(&sol.actions[0]));
    assert_eq!(backup.n_inf, 0);

    // First infeasible step: stored u₁ + K₁(s − z₁); zero gains here, so
    // exactly the stored u₁.
    let s1 = dvector![std::f64::consts::PI + 0.05, 0.1];
    let (a, src) = apply_backup_policy(&s1, &dvector![-1.9], None, &mut backup, &action_box);
    assert_eq!(src, AppliedSource::Backup(1));
    assert_eq!(a, action_box.clamp(&sol.actions[1]));

    // Second and third infeasible steps keep walking the stored plan.
    let (a, src) = apply_backup_policy(&s1, &dvector![-1.9], None, &mut backup, &action_box);
    assert_eq!(src, AppliedSource::Backup(2));
    assert_eq!(a, action_box.clamp(&sol.actions[2]));
    let (a, src) = apply_backup_policy(&s1, &dvector![-1.9], None, &mut backup, &action_box);
    assert_eq!(src, AppliedSource::Backup(3));
    assert_eq!(a, action_box.clamp(&sol.actions[3]));

    // Plan exhausted (n_inf = N−1): raw action passes through.
    let (a, src) = apply_backup_policy(&s1, &dvector![-1.9], None, &mut backup, &action_box);
    assert_eq!(src, AppliedSource::Passthrough);
    assert_eq!(a, dvector![-1.9]);
    assert_eq!(backup.n_inf, 3);

    // Feasible again: counter resets to zero.
    let (_, src) = apply_backup_policy(&s0, &a_req, Some(&sol), &mut backup, &action_box);
    assert_eq!(src, AppliedSource::Filtered);
    assert_eq!(backup.n_inf, 0);
}

#[test]
fn backup_correction_applies_ancillary_feedback() {
    // With nonzero stored gains the correction term must appear.
    let plan_nominal = vec![dvector![0.0, 0.0]; 3];
    let plan_actions = vec![dvector![0.5], dvector![0.25], dvector![0.1]];
    let plan_gains = vec![DMatrix::from_row_slice(1, 2, &[0.5, -0.5]); 3];
    let mut backup = BackupState {
        n_inf: 0,
        horizon: 3,
        stored: Some(psf_core::filter::StoredPlan {
            nominal: plan_nominal,
            actions: plan_actions,
            gains: plan_gains,
        }),
    };
    let action_box = psf_core::env::BoxSet::new(dvector![-2.0], dvector![2.0]).unwrap();
    let s = dvector![0.2, 0.1];
    let (a, src) = apply_backup_policy(&s, &dvector![0.0], None, &mut backup, &action_box);
    assert_eq!(src, AppliedSource::Backup(1));
    // u₁ + K(s − z₁) = 0.25 + (0.5·0.2 − 0.5·0.1) = 0.3
    assert!((a[0] - 0.3).abs() < 1e-12);
}

#[test]
fn solver_is_deterministic_given_identical_inputs() {
    let env = Pendulum::new(2.41);
    let model = ExactModel::new(&env);
    let terminal = pendulum_terminal_set(&env);
    let config = pendulum_config();
    let s = dvector![std::f64::consts::PI - 0.4, 0.9];
    let a = dvector![1.7];
    let warm: Vec<DVector<f64>> = (0..config.horizon).map(|i| dvector![0.1 * i as f64]).collect();
    let run = || {
        let problem = build_problem(
            &model,
            s.clone(),
            a.clone(),
            env.constraints(),
            &terminal,
            &config,
        )
        .unwrap();
        solve(&problem, Some(&warm)).unwrap()
    };
    let s1 = run();
    let s2 = run();
    assert_eq!(s1.actions, s2.actions);
    assert_eq!(s1.objective, s2.objective);
    assert_eq!(s1.iterations, s2.iterations);
    assert_eq!(s1.kkt_residual, s2.kkt_residual);
}

#[test]
fn warm_start_reduces_median_iterations_over_a_run() {
    let env = Pendulum::new(2.41);
    let model = ExactModel::new(&env);
    let terminal = pendulum_terminal_set(&env);
    let config = pendulum_config();
    let mut rng = substream(31, &[purpose::ENV_NOISE, 0]);
    let mut policy_rng = substream(31, &[purpose::POLICY, 0]);
    use rand::Rng;

    let mut s = dvector![std::f64::consts::PI, 0.0];
    let mut iters_cold = Vec::new();
    let mut iters_warm = Vec::new();
    let mut prev: Option<Vec<DVector<f64>>> = None;
    for step in 0..50 {
        // Aggressive bang-bang requests keep the constraints active so the
        // solver actually has work to do at every step.
        let sign = if (step / 5) % 2 == 0 { 1.0 } else { -1.0 };
        let a_t = dvector![sign * (1.5 + 0.5 * policy_rng.random_range(0.0..1.0_f64))];
        let problem = build_problem(
            &model,
            s.clone(),
            a_t.clone(),
            env.constraints(),
            &terminal,
            &config,
        )
        .unwrap();
        let cold = solve(&problem, None).unwrap();
        iters_cold.push(cold.iterations);
        let warm_guess = prev.as_deref().map(warm_start_shift);
        let warm = solve(&problem, warm_guess.as_deref()).unwrap();
        iters_warm.push(warm.iterations);
        prev = Some(warm.actions.clone());
        // Advance with the warm solution's action (or passthrough).
        let applied = if warm.status == FilterStatus::Feasible {
            warm.actions[0].clone()
        } else {
            env.constraints().action.clamp(&a_t)
        };
        s = env.step(&s, &applied, &mut rng).unwrap();
    }
    let median = |v: &mut Vec<usize>| {
        v.sort_unstable();
        v[v.len() / 2]
    };
    let mc = median(&mut iters_cold);
    let mw = median(&mut iters_warm);
    assert!(
        mw <= mc,
        "warm-start median iterations {mw} should not exceed cold {mc}"
    );
}

#[test]
fn single_step_horizon_builds_and_solves() {
    let env = Pendulum::new(2.41);
    let model = ExactModel::new(&env);
    let terminal = pendulum_terminal_set(&env);
    let config = FilterConfig {
        horizon: 1,
        epsilon: 2.41,
        xi: 0.9,
        ..Default::default()
    };
    let s = dvector![std::f64::consts::PI, 0.0];
    let problem = build_problem(
        &model,
        s,
        dvector![0.0],
        env.constraints(),
        &terminal,
        &config,
    )
    .unwrap();
    let sol = solve(&problem, None).unwrap();
    assert_eq!(sol.actions.len(), 1);
    assert_eq!(sol.tube.len(), 1);
}
