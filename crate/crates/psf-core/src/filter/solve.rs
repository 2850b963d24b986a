//! Exact-penalty SQP for the filtering problem.
//!
//! Each iteration rolls the tube out from the current action sequence,
//! linearizes the constraints along it (margins frozen, certainty
//! derivatives by central finite differences), and solves a convex QP in the
//! action update and the constraint slacks. A backtracking line search on
//! the exact L1 merit keeps the iteration monotone; the subproblem step norm
//! is the convergence residual.

use super::{FilterProblem, FilterSolution, FilterStatus};
use crate::error::Result;
use crate::opt::solve_diag_qp;
use crate::tube::{build_tube, tighten_action_box, tighten_box, Tube};
use nalgebra::{DMatrix, DVector};

struct SoftRow {
    /// Constraint value c (violated when positive beyond slack).
    value: f64,
    /// Gradient w.r.t. the flat action vector; filled only for rows passing
    /// the screening gap.
    grad: Option<DVector<f64>>,
    group: Group,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Group {
    State,
    Certainty,
    Terminal,
}

struct Evaluation {
    rows: Vec<SoftRow>,
    merit: f64,
    objective_sq: f64,
    slack_state: f64,
    slack_certainty: f64,
    slack_terminal: f64,
    /// Tightened action bounds per step; `None` when some box is empty.
    action_bounds: Option<(Vec<DVector<f64>>, Vec<DVector<f64>>)>,
}

fn flat_to_actions(u: &DVector<f64>, horizon: usize, n_a: usize) -> Vec<DVector<f64>> {
    (0..horizon)
        .map(|n| u.rows(n * n_a, n_a).into_owned())
        .collect()
}

fn actions_to_flat(actions: &[DVector<f64>], n_a: usize) -> DVector<f64> {
    let mut u = DVector::zeros(actions.len() * n_a);
    for (n, a) in actions.iter().enumerate() {
        u.rows_mut(n * n_a, n_a).copy_from(a);
    }
    u
}

/// Evaluate all constraint values, slacks, and the merit at (u, tube).
fn evaluate(problem: &FilterProblem, tube: &Tube, u: &[DVector<f64>]) -> Result<Evaluation> {
    let cfg = problem.config;
    let horizon = cfg.horizon;
    let n_s = problem.model.state_dim();
    let mut rows = Vec::new();
    let mut slack_state = 0.0_f64;
    let mut slack_certainty = 0.0_f64;
    let mut slack_terminal = 0.0_f64;

    let mut lo_bounds = Vec::with_capacity(horizon);
    let mut hi_bounds = Vec::with_capacity(horizon);
    let mut action_ok = true;

    for n in 0..horizon {
        let ell = tube.ellipsoid(n)?;
        let m = ell.factor();
        // State box, tightened by the ellipsoid support per facet.
        let tb = tighten_box(&problem.constraints.state, m);
        for d in 0..n_s {
            let z = tube.nominal[n][d];
            let up = z - tb.hi[d];
            let lo = tb.lo[d] - z;
            slack_state = slack_state.max(up).max(lo);
            rows.push(SoftRow {
                value: up,
                grad: None,
                group: Group::State,
            });
            rows.push(SoftRow {
                value: lo,
                grad: None,
                group: Group::State,
            });
        }
        // Tightened hard action box.
        let ta = tighten_action_box(&problem.constraints.action, &tube.gains[n], m);
        if ta.empty {
            action_ok = false;
        }
        lo_bounds.push(ta.lo);
        hi_bounds.push(ta.hi);
        // Certainty along the nominal pair.
        let cert = problem.model.certainty(&tube.nominal[n], &u[n])?;
        let value = (cfg.xi + tube.margins[n]) - cert;
        slack_certainty = slack_certainty.max(value);
        rows.push(SoftRow {
            value,
            grad: None,
            group: Group::Certainty,
        });
    }
    // Terminal facets on z_N.
    let ell_n = tube.ellipsoid(horizon)?;
    let m_n = ell_n.factor();
    let z_n = &tube.nominal[horizon];
    for f in &problem.terminal.facets {
        let margin = (m_n * &f.normal).norm();
        let value = f.normal.dot(z_n) - (f.offset - margin);
        slack_terminal = slack_terminal.max(value);
        rows.push(SoftRow {
            value,
            grad: None,
            group: Group::Terminal,
        });
    }

    slack_state = slack_state.max(0.0);
    slack_certainty = slack_certainty.max(0.0);
    slack_terminal = slack_terminal.max(0.0);

    let diff = &u[0] - &problem.a_t;
    let objective_sq = diff.norm_squared();
    let mut merit = objective_sq;
    for r in &rows {
        let w = match r.group {
            Group::State => cfg.penalty_state,
            Group::Certainty => cfg.penalty_certainty,
            Group::Terminal => cfg.penalty_terminal,
        };
        merit += w * r.value.max(0.0);
    }

    Ok(Evaluation {
        rows,
        merit,
        objective_sq,
        slack_state,
        slack_certainty,
        slack_terminal,
        action_bounds: if action_ok {
            Some((lo_bounds, hi_bounds))
        } else {
            None
        },
    })
}

/// Sensitivities dz_n/du for n = 0..N via the closed-loop chain.
fn state_sensitivities(problem: &FilterProblem, tube: &Tube) -> Result<Vec<DMatrix<f64>>> {
    let horizon = problem.config.horizon;
    let n_s = problem.model.state_dim();
    let n_a = problem.model.action_dim();
    let n_u = horizon * n_a;
    let mut sens = Vec::with_capacity(horizon + 1);
    sens.push(DMatrix::zeros(n_s, n_u));
    for n in 0..horizon {
        let (a, b) = problem.model.jacobians(&tube.nominal[n], &tube.actions[n])?;
        let f = &a + &b * &tube.gains[n];
        let mut next = &f * &sens[n];
        for c in 0..n_a {
            for r in 0..n_s {
                next[(r, n * n_a + c)] += b[(r, c)];
            }
        }
        sens.push(next);
    }
    Ok(sens)
}

/// Central finite differences of the certainty measure at (z, u).
fn certainty_gradient(
    problem: &FilterProblem,
    z: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let h0 = problem.config.fd_step;
    let n_s = z.len();
    let n_a = u.len();
    let mut dz = DVector::zeros(n_s);
    for i in 0..n_s {
        let h = h0 * z[i].abs().max(1.0);
        let mut zp = z.clone();
        zp[i] += h;
        let mut zm = z.clone();
        zm[i] -= h;
        dz[i] = (problem.model.certainty(&zp, u)? - problem.model.certainty(&zm, u)?) / (2.0 * h);
    }
    let mut du = DVector::zeros(n_a);
    for i in 0..n_a {
        let h = h0 * u[i].abs().max(1.0);
        let mut up = u.clone();
        up[i] += h;
        let mut um = u.clone();
        um[i] -= h;
        du[i] = (problem.model.certainty(z, &up)? - problem.model.certainty(z, &um)?) / (2.0 * h);
    }
    Ok((dz, du))
}

/// Fill in gradients for the rows passing the screening gaps.
fn linearize_rows(
    problem: &FilterProblem,
    tube: &Tube,
    eval: &mut Evaluation,
) -> Result<()> {
    let cfg = problem.config;
    let horizon = cfg.horizon;
    let n_s = problem.model.state_dim();
    let n_a = problem.model.action_dim();
    let n_u = horizon * n_a;
    let sens = state_sensitivities(problem, tube)?;

    // Screening gaps per group; the most-violated row of each group is
    // always kept so the QP can never ignore an active group entirely.
    const STATE_GAP: f64 = 0.5;
    const CERT_GAP: f64 = 0.1;
    const TERM_GAP: f64 = 0.5;
    let mut max_val = [f64::NEG_INFINITY; 3];
    for r in &eval.rows {
        let gi = r.group as usize;
        if r.value > max_val[gi] {
            max_val[gi] = r.value;
        }
    }

    let mut cert_grad_cache: Vec<Option<(DVector<f64>, DVector<f64>)>> = vec![None; horizon];
    // Row ordering matches `evaluate`: per step n: 2*n_s state rows
    // (upper, lower per dim), then 1 certainty row; then terminal rows.
    let mut idx = 0usize;
    for n in 0..horizon {
        for d in 0..n_s {
            for sign in [1.0_f64, -1.0] {
                let row = &mut eval.rows[idx];
                let gap = if row.value >= max_val[Group::State as usize] {
                    f64::INFINITY
                } else {
                    STATE_GAP
                };
                if row.value > -gap {
                    let mut g = DVector::zeros(n_u);
                    for c in 0..n_u {
                        g[c] = sign * sens[n][(d, c)];
                    }
                    row.grad = Some(g);
                }
                idx += 1;
            }
        }
        let row_val = eval.rows[idx].value;
        let keep = row_val > -CERT_GAP || row_val >= max_val[Group::Certainty as usize];
        if keep && cfg.xi > 0.0 {
            if cert_grad_cache[n].is_none() {
                cert_grad_cache[n] =
                    Some(certainty_gradient(problem, &tube.nominal[n], &tube.actions[n])?);
            }
            let (dz, du) = cert_grad_cache[n].as_ref().unwrap();
            // c = (ξ + g_n) − cert(z_n, u_n): gradient is −∇cert chained.
            let mut g = DVector::zeros(n_u);
            let chained = dz.transpose() * &sens[n];
            for c in 0..n_u {
                g[c] = -chained[(0, c)];
            }
            for j in 0..n_a {
                g[n * n_a + j] -= du[j];
            }
            eval.rows[idx].grad = Some(g);
        }
        idx += 1;
    }
    for f in &problem.terminal.facets {
        let row = &mut eval.rows[idx];
        let gap = if row.value >= max_val[Group::Terminal as usize] {
            f64::INFINITY
        } else {
            TERM_GAP
        };
        if row.value > -gap {
            let chained = f.normal.transpose() * &sens[horizon];
            let mut g = DVector::zeros(n_u);
            for c in 0..n_u {
                g[c] = chained[(0, c)];
            }
            row.grad = Some(g);
        }
        idx += 1;
    }
    debug_assert_eq!(idx, eval.rows.len());
    Ok(())
}

struct QpStep {
    d: DVector<f64>,
}

fn solve_subproblem(
    problem: &FilterProblem,
    eval: &Evaluation,
    u_flat: &DVector<f64>,
) -> Result<QpStep> {
    let cfg = problem.config;
    let n_a = problem.model.action_dim();
    let n_u = cfg.horizon * n_a;
    let included: Vec<&SoftRow> = eval.rows.iter().filter(|r| r.grad.is_some()).collect();
    let m_soft = included.len();
    let n_x = n_u + m_soft;

    let mut p_diag = DVector::from_element(n_x, 0.0);
    let mut q = DVector::zeros(n_x);
    for j in 0..n_u {
        p_diag[j] = cfg.damping;
    }
    for j in 0..n_a {
        p_diag[j] += 2.0;
        q[j] = 2.0 * (u_flat[j] - problem.a_t[j]);
    }
    for (i, row) in included.iter().enumerate() {
        p_diag[n_u + i] = 1e-9;
        q[n_u + i] = match row.group {
            Group::State => cfg.penalty_state,
            Group::Certainty => cfg.penalty_certainty,
            Group::Terminal => cfg.penalty_terminal,
        };
    }

    let (lo, hi) = eval
        .action_bounds
        .as_ref()
        .expect("caller checks emptiness");
    let m_rows = m_soft * 2 + n_u * 2;
    let mut a = DMatrix::zeros(m_rows, n_x);
    let mut b = DVector::zeros(m_rows);
    let mut r = 0;
    for (i, row) in included.iter().enumerate() {
        let g = row.grad.as_ref().unwrap();
        for c in 0..n_u {
            a[(r, c)] = g[c];
        }
        a[(r, n_u + i)] = -1.0;
        b[r] = -row.value;
        r += 1;
        a[(r, n_u + i)] = -1.0;
        b[r] = 0.0;
        r += 1;
    }
    for n in 0..cfg.horizon {
        for j in 0..n_a {
            let col = n * n_a + j;
            let u_cur = u_flat[col];
            let mut ub = (hi[n][j] - u_cur).min(cfg.trust_init);
            let mut lb = (lo[n][j] - u_cur).max(-cfg.trust_init);
            if lb > ub {
                // The tightened box moved beyond the trust region; allow the
                // full correction so the step can re-enter it.
                lb = lo[n][j] - u_cur;
                ub = hi[n][j] - u_cur;
            }
            a[(r, col)] = 1.0;
            b[r] = ub;
            r += 1;
            a[(r, col)] = -1.0;
            b[r] = -lb;
            r += 1;
        }
    }
    debug_assert_eq!(r, m_rows);

    let sol = solve_diag_qp(&p_diag, &q, &a, &b)?;
    Ok(QpStep {
        d: sol.x.rows(0, n_u).into_owned(),
    })
}

/// Solve the filtering problem from an optional warm start.
pub fn solve(problem: &FilterProblem, warm_start: Option<&[DVector<f64>]>) -> Result<FilterSolution> {
    let cfg = problem.config;
    let n_a = problem.model.action_dim();
    let horizon = cfg.horizon;

    // Cold start is the neutral (zero) sequence; callers in a receding loop
    // pass the shifted previous solution instead.
    let mut actions: Vec<DVector<f64>> = match warm_start {
        Some(w) if w.len() == horizon => w
            .iter()
            .map(|a| problem.constraints.action.clamp(a))
            .collect(),
        _ => vec![DVector::zeros(n_a); horizon],
    };

    let mut tube = build_tube(
        problem.model,
        &problem.s_t,
        &actions,
        &problem.gains,
        cfg.epsilon,
        &cfg.lipschitz,
    )?;
    let mut eval = evaluate(problem, &tube, &actions)?;
    let mut iterations = 0usize;
    let mut kkt_residual = f64::INFINITY;
    let mut hard_infeasible = eval.action_bounds.is_none();

    while !hard_infeasible && iterations < cfg.max_iters {
        linearize_rows(problem, &tube, &mut eval)?;
        let u_flat = actions_to_flat(&actions, n_a);
        let step = match solve_subproblem(problem, &eval, &u_flat) {
            Ok(s) => s,
            Err(_) => break, // keep best-found iterate
        };
        iterations += 1;
        kkt_residual = step.d.amax();
        if kkt_residual <= cfg.kkt_tol {
            break;
        }
        // Backtracking on the exact merit.
        let mut t = 1.0;
        let mut accepted = false;
        while t >= 1.0 / 64.0 {
            let u_c = &u_flat + &step.d * t;
            let cand = flat_to_actions(&u_c, horizon, n_a);
            let tube_c = build_tube(
                problem.model,
                &problem.s_t,
                &cand,
                &problem.gains,
                cfg.epsilon,
                &cfg.lipschitz,
            )?;
            let eval_c = evaluate(problem, &tube_c, &cand)?;
            if eval_c.merit < eval.merit - 1e-14 {
                actions = cand;
                tube = tube_c;
                eval = eval_c;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
        if eval.action_bounds.is_none() {
            hard_infeasible = true;
        }
    }

    let status = if hard_infeasible {
        FilterStatus::Infeasible
    } else if eval.slack_state <= cfg.slack_tol
        && eval.slack_certainty <= cfg.slack_tol
        && eval.slack_terminal <= cfg.slack_tol
    {
        FilterStatus::Feasible
    } else {
        FilterStatus::SoftFeasible
    };

    Ok(FilterSolution {
        objective: eval.objective_sq.sqrt(),
        actions,
        tube,
        slack_state: eval.slack_state,
        slack_certainty: eval.slack_certainty,
        slack_terminal: eval.slack_terminal,
        status,
        iterations,
        kkt_residual,
    })
}
