//! Dense two-phase primal simplex with Bland's anti-cycling rule.
//!
//! Solves `max cᵀx  s.t.  F x ≤ g` over free `x`. The free variables are
//! split as `x = x⁺ − x⁻`; rows with negative offset receive an artificial
//! variable for phase one. Problems here have at most a few hundred rows and
//! a dozen columns, so a full tableau is simplest.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::geometry::tol;
use crate::scalar::Real;

const MAX_PIVOTS: usize = 50_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    /// Phase one could not drive the artificial variables to zero; carries
    /// the minimum total violation found.
    #[error("linear program is infeasible (phase-one residual {0:.3e})")]
    Infeasible(f64),
    #[error("linear program is unbounded in the objective direction")]
    Unbounded,
    #[error("simplex pivot limit reached")]
    IterationLimit,
    #[error("dimension mismatch in linear program")]
    Dimension,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution<T: Real> {
    pub value: T,
    pub argmax: DVector<T>,
}

struct Tableau<T: Real> {
    rows: usize,
    cols: usize,
    /// row-major `rows × (cols + 1)`, last column is the right-hand side
    data: Vec<T>,
    basis: Vec<usize>,
    /// reduced costs of the current (minimization) objective, length `cols + 1`;
    /// last entry is minus the objective value
    cost: Vec<T>,
    n_art_start: usize,
}

impl<T: Real> Tableau<T> {
    fn at(&self, r: usize, c: usize) -> T {
        self.data[r * (self.cols + 1) + c]
    }

    fn rhs(&self, r: usize) -> T {
        self.at(r, self.cols)
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let w = self.cols + 1;
        let p = self.data[pr * w + pc];
        for c in 0..w {
            self.data[pr * w + c] /= p;
        }
        for r in 0..self.rows {
            if r == pr {
                continue;
            }
            let factor = self.data[r * w + pc];
            if factor != T::zero() {
                for c in 0..w {
                    let v = self.data[pr * w + c];
                    self.data[r * w + c] -= factor * v;
                }
            }
        }
        let factor = self.cost[pc];
        if factor != T::zero() {
            for c in 0..w {
                let v = self.data[pr * w + c];
                self.cost[c] -= factor * v;
            }
        }
        self.basis[pr] = pc;
    }

    /// Installs a minimization objective and prices out the basis.
    fn set_objective(&mut self, costs: &[T]) {
        let w = self.cols + 1;
        self.cost = costs.to_vec();
        self.cost.push(T::zero());
        for r in 0..self.rows {
            let cb = self.cost[self.basis[r]];
            if cb != T::zero() {
                for c in 0..w {
                    let v = self.data[r * w + c];
                    self.cost[c] -= cb * v;
                }
            }
        }
    }

    /// Runs Bland-rule pivots until optimal. `allowed` limits entering columns.
    fn optimize(&mut self, allowed: usize) -> Result<(), LpError> {
        let eps = T::tol(tol::LP_PIVOT);
        for _ in 0..MAX_PIVOTS {
            let entering = (0..allowed).find(|&c| self.cost[c] < -eps);
            let Some(pc) = entering else {
                return Ok(());
            };
            let mut best: Option<(usize, T)> = None;
            for r in 0..self.rows {
                let a = self.at(r, pc);
                if a > eps {
                    let ratio = self.rhs(r) / a;
                    best = match best {
                        None => Some((r, ratio)),
                        Some((br, bv)) => {
                            let tie = (ratio - bv).abs() <= eps * (T::one() + bv.abs());
                            if ratio < bv && !tie || tie && self.basis[r] < self.basis[br] {
                                Some((r, ratio))
                            } else {
                                Some((br, bv))
                            }
                        }
                    };
                }
            }
            match best {
                None => return Err(LpError::Unbounded),
                Some((pr, _)) => self.pivot(pr, pc),
            }
        }
        Err(LpError::IterationLimit)
    }
}

/// Builds the phase-one tableau and drives it to a feasible basis.
fn feasible_tableau<T: Real>(f: &DMatrix<T>, g: &DVector<T>) -> Result<Tableau<T>, LpError> {
    let (m, n) = f.shape();
    if g.len() != m {
        return Err(LpError::Dimension);
    }
    let negative: Vec<usize> = (0..m).filter(|&i| g[i] < T::zero()).collect();
    let n_art = negative.len();
    let cols = 2 * n + m + n_art;
    let w = cols + 1;
    let mut data = vec![T::zero(); m * w];
    let mut basis = vec![0; m];
    let mut art = 0;
    for i in 0..m {
        let sign = if g[i] < T::zero() { -T::one() } else { T::one() };
        for j in 0..n {
            data[i * w + j] = sign * f[(i, j)];
            data[i * w + n + j] = -sign * f[(i, j)];
        }
        data[i * w + 2 * n + i] = sign;
        data[i * w + cols] = sign * g[i];
        if g[i] < T::zero() {
            let col = 2 * n + m + art;
            data[i * w + col] = T::one();
            basis[i] = col;
            art += 1;
        } else {
            basis[i] = 2 * n + i;
        }
    }
    let mut tab = Tableau {
        rows: m,
        cols,
        data,
        basis,
        cost: Vec::new(),
        n_art_start: 2 * n + m,
    };
    if n_art > 0 {
        let mut costs = vec![T::zero(); cols];
        for c in costs.iter_mut().skip(tab.n_art_start) {
            *c = T::one();
        }
        tab.set_objective(&costs);
        tab.optimize(cols)?;
        let residual = -tab.cost[cols];
        let scale = T::one() + g.iter().fold(T::zero(), |a, v| a.max(v.abs()));
        if residual > T::tol(tol::LP_FEAS) * scale {
            return Err(LpError::Infeasible(residual.as_f64()));
        }
        // drive zero-level artificials out of the basis where possible
        let eps = T::tol(tol::LP_PIVOT);
        for r in 0..m {
            if tab.basis[r] >= tab.n_art_start {
                if let Some(c) = (0..tab.n_art_start).find(|&c| tab.at(r, c).abs() > eps) {
                    tab.pivot(r, c);
                }
            }
        }
    }
    Ok(tab)
}

fn extract_x<T: Real>(tab: &Tableau<T>, n: usize) -> DVector<T> {
    let mut x = DVector::zeros(n);
    for r in 0..tab.rows {
        let b = tab.basis[r];
        let v = tab.rhs(r);
        if b < n {
            x[b] += v;
        } else if b < 2 * n {
            x[b - n] -= v;
        }
    }
    x
}

/// Maximizes `cᵀx` over `{x : F x ≤ g}`.
pub fn maximize<T: Real>(c: &DVector<T>, f: &DMatrix<T>, g: &DVector<T>) -> Result<LpSolution<T>, LpError> {
    let n = f.ncols();
    if c.len() != n {
        return Err(LpError::Dimension);
    }
    let mut tab = feasible_tableau(f, g)?;
    let mut costs = vec![T::zero(); tab.cols];
    for j in 0..n {
        costs[j] = -c[j];
        costs[n + j] = c[j];
    }
    tab.set_objective(&costs);
    let allowed = tab.n_art_start;
    tab.optimize(allowed)?;
    let argmax = extract_x(&tab, n);
    Ok(LpSolution {
        value: c.dot(&argmax),
        argmax,
    })
}

/// Any point of `{x : F x ≤ g}` (the phase-one basic solution).
pub fn feasible_point<T: Real>(f: &DMatrix<T>, g: &DVector<T>) -> Result<DVector<T>, LpError> {
    let tab = feasible_tableau(f, g)?;
    Ok(extract_x(&tab, f.ncols()))
}
