//! Dense dual active-set solver for `min ½ xᵀHx + fᵀx  s.t.  A x ≤ b`.
//!
//! Problems here have a handful of variables, so each iteration recomputes
//! its directions from `H⁻¹` directly. When the dual method detects
//! infeasibility, the phase-one simplex supplies the residual as certificate.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::geometry::lp::{self, LpError};
use crate::numerics;
use crate::scalar::Real;

const ACTIVE_TOL: f64 = 1e-9;
const STEP_TOL: f64 = 1e-12;
const ZERO_ROW: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    /// The phase-one minimum of total constraint violation is positive.
    #[error("QP is infeasible (phase-one residual {residual:.3e})")]
    Infeasible { residual: f64 },
    #[error("QP Hessian is not positive definite")]
    NotConvex,
    #[error("QP active-set iteration limit reached")]
    IterationLimit,
    #[error("QP dimension mismatch")]
    Dimension,
    #[error("singular KKT system")]
    Singular,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Qp<T: Real> {
    pub h: DMatrix<T>,
    pub f: DVector<T>,
    pub a: DMatrix<T>,
    pub b: DVector<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub complementarity: f64,
    /// most negative multiplier, zero when dual feasible
    pub dual: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal)
            .max(self.complementarity)
            .max(self.dual)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution<T: Real> {
    pub x: DVector<T>,
    /// multipliers of the original rows
    pub lambda: DVector<T>,
    /// original row indices of the final working set
    pub active: Vec<usize>,
    pub iterations: usize,
    pub objective: T,
    pub kkt: KktResiduals,
}

impl<T: Real> Qp<T> {
    pub fn objective(&self, x: &DVector<T>) -> T {
        (x.transpose() * &self.h * x)[0] * T::lit(0.5) + self.f.dot(x)
    }

    /// Largest row violation `max(A x − b)`, or `−∞` without rows.
    pub fn max_violation(&self, x: &DVector<T>) -> T {
        if self.a.nrows() == 0 {
            return -T::max_value().unwrap_or_else(T::one);
        }
        (&self.a * x - &self.b).max()
    }

    pub fn kkt_residuals(&self, x: &DVector<T>, lambda: &DVector<T>) -> KktResiduals {
        let stat = &self.h * x + &self.f + self.a.transpose() * lambda;
        let mut r = KktResiduals {
            stationarity: numerics::max_abs_vec(&stat).as_f64(),
            ..Default::default()
        };
        for i in 0..self.a.nrows() {
            let slack = self.b[i] - self.a.row(i).dot(&x.transpose());
            r.primal = r.primal.max((-slack).as_f64());
            r.complementarity = r.complementarity.max((lambda[i] * slack).abs().as_f64());
            r.dual = r.dual.max((-lambda[i]).as_f64());
        }
        // keep −0 out of the reports
        r.primal += 0.0;
        r.dual += 0.0;
        r
    }
}

/// Primal and dual directions for adding row `p` to the working set:
/// `z = H⁻¹(n − Nᵀr)`, `r = (N H⁻¹ Nᵀ)⁻¹ N H⁻¹ n`, with `N` the working rows.
fn directions<T: Real>(
    hinv: &DMatrix<T>,
    a: &DMatrix<T>,
    work: &[usize],
    p: usize,
) -> Result<(DVector<T>, DVector<T>), QpError> {
    let n = a.row(p).transpose();
    let hn = hinv * &n;
    if work.is_empty() {
        return Ok((hn, DVector::zeros(0)));
    }
    let nw = a.select_rows(work.iter());
    let g = &nw * hinv * nw.transpose();
    let r = g.lu().solve(&(&nw * &hn)).ok_or(QpError::Singular)?;
    let z = &hn - hinv * nw.transpose() * &r;
    Ok((z, r))
}

fn certificate<T: Real>(a: &DMatrix<T>, b: &DVector<T>) -> QpError {
    match lp::feasible_point(a, b) {
        Err(LpError::Infeasible(r)) => QpError::Infeasible { residual: r },
        Err(LpError::IterationLimit) => QpError::IterationLimit,
        Err(_) => QpError::Dimension,
        // the dual method and the simplex disagree; report the tie as singular
        Ok(_) => QpError::Singular,
    }
}

/// Solves the QP with the dual active-set method of Goldfarb and Idnani.
/// Rows are normalized internally; the most violated row enters first,
/// lowest index on ties.
pub fn solve_qp<T: Real>(qp: &Qp<T>) -> Result<QpSolution<T>, QpError> {
    let n = qp.h.nrows();
    if qp.h.ncols() != n || qp.f.len() != n || qp.a.ncols() != n || qp.a.nrows() != qp.b.len() {
        return Err(QpError::Dimension);
    }
    if !numerics::is_positive_definite(&qp.h) {
        return Err(QpError::NotConvex);
    }
    // normalized copy, constant rows checked and dropped
    let mut rows: Vec<usize> = Vec::new();
    let mut scale: Vec<T> = Vec::new();
    for i in 0..qp.a.nrows() {
        let norm = qp.a.row(i).norm();
        if norm <= T::tol(ZERO_ROW) {
            if qp.b[i] < -T::tol(ACTIVE_TOL) {
                return Err(QpError::Infeasible {
                    residual: (-qp.b[i]).as_f64(),
                });
            }
            continue;
        }
        rows.push(i);
        scale.push(norm);
    }
    let m = rows.len();
    let a = DMatrix::from_fn(m, n, |r, c| qp.a[(rows[r], c)] / scale[r]);
    let b = DVector::from_fn(m, |r, _| qp.b[rows[r]] / scale[r]);
    let active_tol = T::tol(ACTIVE_TOL);
    let step_tol = T::tol(STEP_TOL);

    let chol = qp.h.clone().cholesky().ok_or(QpError::NotConvex)?;
    let hinv = chol.inverse();
    let mut x = chol.solve(&-&qp.f);
    let mut work: Vec<usize> = Vec::new();
    // multipliers of the working rows, same order as `work`
    let mut u: Vec<T> = Vec::new();
    let mut iterations = 0;
    let limit = 100 + 20 * (m + n);

    'outer: loop {
        // most violated row
        let mut enter: Option<(usize, T)> = None;
        for i in 0..m {
            if work.contains(&i) {
                continue;
            }
            let v = a.row(i).dot(&x.transpose()) - b[i];
            if v > active_tol && enter.is_none_or(|(_, best)| v > best) {
                enter = Some((i, v));
            }
        }
        let Some((p, _)) = enter else { break };
        let mut u_p = T::zero();
        loop {
            iterations += 1;
            if iterations > limit {
                return Err(QpError::IterationLimit);
            }
            let (z, r) = directions(&hinv, &a, &work, p)?;
            // dual step: largest t keeping the working multipliers nonnegative
            // (they decrease by t r)
            let mut t1: Option<(usize, T)> = None;
            for (c, rc) in r.iter().enumerate() {
                if *rc > step_tol {
                    let t = u[c] / *rc;
                    if t1.is_none_or(|(_, best)| t < best) {
                        t1 = Some((c, t));
                    }
                }
            }
            let viol = a.row(p).dot(&x.transpose()) - b[p];
            let zn = a.row(p).dot(&z.transpose());
            let primal = numerics::max_abs_vec(&z) > step_tol && zn > step_tol;
            if !primal {
                // row p depends on the working set
                let Some((c, t)) = t1 else {
                    return Err(certificate(&a, &b));
                };
                for (k, rk) in r.iter().enumerate() {
                    u[k] -= t * *rk;
                }
                u_p += t;
                work.remove(c);
                u.remove(c);
                continue;
            }
            let t2 = viol / zn;
            let (t, full) = match t1 {
                Some((_, t)) if t < t2 => (t, false),
                _ => (t2, true),
            };
            x -= &z * t;
            for (k, rk) in r.iter().enumerate() {
                u[k] -= t * *rk;
            }
            u_p += t;
            if full {
                work.push(p);
                u.push(u_p);
                continue 'outer;
            }
            let (c, _) = t1.expect("partial step has a blocking row");
            work.remove(c);
            u.remove(c);
        }
    }

    let mut lambda = DVector::zeros(qp.a.nrows());
    for (c, &r) in work.iter().enumerate() {
        lambda[rows[r]] = u[c].max(T::zero()) / scale[r];
    }
    let active: Vec<usize> = {
        let mut v: Vec<usize> = work.iter().map(|&r| rows[r]).collect();
        v.sort_unstable();
        v
    };
    Ok(QpSolution {
        objective: qp.objective(&x),
        kkt: qp.kkt_residuals(&x, &lambda),
        x,
        lambda,
        active,
        iterations,
    })
}
