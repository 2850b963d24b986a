//! Thin wrapper around the interior-point solver for the small dense
//! QPs and LPs that show up in constraint projection and set geometry.

use crate::error::{CoreError, Result};
use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, NonnegativeConeT, SolverStatus,
};
use nalgebra::{DMatrix, DVector};

pub fn dense_to_csc(m: &DMatrix<f64>) -> CscMatrix<f64> {
    let (rows, cols) = m.shape();
    let mut colptr = Vec::with_capacity(cols + 1);
    let mut rowval = Vec::new();
    let mut nzval = Vec::new();
    colptr.push(0);
    for c in 0..cols {
        for r in 0..rows {
            let v = m[(r, c)];
            if v != 0.0 {
                rowval.push(r);
                nzval.push(v);
            }
        }
        colptr.push(rowval.len());
    }
    CscMatrix::new(rows, cols, colptr, rowval, nzval)
}

/// Diagonal CSC matrix from a vector (zeros kept structurally absent).
pub fn diag_to_csc(d: &DVector<f64>) -> CscMatrix<f64> {
    let n = d.len();
    let mut colptr = Vec::with_capacity(n + 1);
    let mut rowval = Vec::new();
    let mut nzval = Vec::new();
    colptr.push(0);
    for i in 0..n {
        if d[i] != 0.0 {
            rowval.push(i);
            nzval.push(d[i]);
        }
        colptr.push(rowval.len());
    }
    CscMatrix::new(n, n, colptr, rowval, nzval)
}

pub struct QpSolution {
    pub x: DVector<f64>,
}

/// Solve `min ½ xᵀ diag(p) x + qᵀx  s.t.  A x ≤ b`.
///
/// The quadratic term is restricted to a diagonal because that is all the
/// callers need; `p` entries must be nonnegative.
pub fn solve_diag_qp(
    p_diag: &DVector<f64>,
    q: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Result<QpSolution> {
    let m = a.nrows();
    debug_assert_eq!(a.ncols(), q.len());
    debug_assert_eq!(b.len(), m);
    let p = diag_to_csc(p_diag);
    let a_csc = dense_to_csc(a);
    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .max_iter(200)
        .tol_gap_abs(1e-10)
        .tol_gap_rel(1e-10)
        .tol_feas(1e-10)
        .build()
        .map_err(|e| CoreError::Numerical(format!("solver settings: {e:?}")))?;
    let mut solver = DefaultSolver::new(
        &p,
        q.as_slice(),
        &a_csc,
        b.as_slice(),
        &[NonnegativeConeT(m)],
        settings,
    )
    .map_err(|e| CoreError::Numerical(format!("solver setup: {e:?}")))?;
    solver.solve();
    let status = solver.solution.status;
    match status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => Ok(QpSolution {
            x: DVector::from_column_slice(&solver.solution.x),
        }),
        other => Err(CoreError::Numerical(format!(
            "QP did not solve: status {other:?}"
        ))),
    }
}
