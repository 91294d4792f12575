//! Receding-horizon problem of one subsystem.
//!
//! The decision vector stacks `δα̂(k+l|k)` for `l = 0..N−1`. Every predicted
//! quantity is affine in it, so the problem is built once as a dense QP and
//! the same affine maps are reused to report trajectories.

mod affine;
pub mod qp;

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::geometry::Polytope;
use crate::model::ClosedLoopCascade;
use crate::numerics::{NumericsError, Weighting};
use crate::scalar::Real;
use crate::sets::SetSuite;

use affine::Affine;
pub use qp::{solve_qp, KktResiduals, Qp, QpError, QpSolution};

pub const LYAPUNOV_TOL: f64 = 1e-10;
/// Slack on interaction rows; `W_z` is flat in the integrator coordinates.
pub const TOL_FLAT: f64 = 1e-7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RhopError {
    #[error("subsystem {sub}: {source}")]
    Qp { sub: usize, source: QpError },
    #[error("subsystem {sub}: {source}")]
    Numerics { sub: usize, source: NumericsError },
    #[error("subsystem {sub}: terminal weights fail verification ({msg})")]
    Weights { sub: usize, msg: String },
    #[error("subsystem {sub}: {msg}")]
    Dimension { sub: usize, msg: String },
}

/// Which constraint sets the stage and anticipative rows use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tightening {
    /// step-indexed `XU(l)`
    Dynamic,
    /// `XU_∞` everywhere
    Static,
}

/// Input driving the interaction-deviation recursion `σ̂`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaInput {
    /// `Δα̂ = y_r(k) + δα̂(k+l|k) − (y_r(k−1) + δα̂(k+l|k−1))`
    #[default]
    Increment,
    /// difference of the applied-reference predictions
    /// `ǧ(k+l|k) − ǧ(k+l|k−1)`
    Trajectory,
}

#[derive(Debug, Clone)]
pub struct OutletContext<T: Real> {
    pub index: usize,
    pub phi: DMatrix<T>,
    pub h: DMatrix<T>,
    /// `Φ_mj` for every inlet `j` of the outlet
    pub inlets: Vec<(usize, DMatrix<T>)>,
    /// `XU^m(l)` for `l = 0..=N`
    pub xu: Vec<Polytope<T>>,
    pub w_z: Polytope<T>,
}

#[derive(Debug, Clone)]
pub struct RhopContext<T: Real> {
    pub index: usize,
    pub horizon: usize,
    pub weights: Weighting<T>,
    pub phi: DMatrix<T>,
    pub gamma: DMatrix<T>,
    pub h: DMatrix<T>,
    pub inlets: Vec<(usize, DMatrix<T>)>,
    /// `XU(l)` for `l = 0..=N`
    pub stage: Vec<Polytope<T>>,
    pub o_eps: Polytope<T>,
    pub outlets: Vec<OutletContext<T>>,
    pub sigma_input: SigmaInput,
}

impl<T: Real> RhopContext<T> {
    /// Context for subsystem `index` from the synthesized cascade.
    pub fn new(
        index: usize,
        cascade: &ClosedLoopCascade<T>,
        suite: &SetSuite<T>,
        tightening: Tightening,
        horizon: usize,
    ) -> Result<Self, RhopError> {
        let sub = index + 1;
        if horizon == 0 {
            return Err(RhopError::Dimension {
                sub,
                msg: "horizon must be at least 1".into(),
            });
        }
        let cl = &cascade.subsystems[index];
        let d = &cascade.design;
        let q = DMatrix::identity(cl.nz(), cl.nz()) * T::lit(d.rhop_q);
        let r_alpha = DMatrix::identity(cl.ny, cl.ny) * T::lit(d.rhop_r_alpha);
        let weights = Weighting::terminal(&cl.phi, &cl.gamma, q, r_alpha)
            .map_err(|source| RhopError::Numerics { sub, source })?;
        verify_weights(sub, &weights, &cl.phi, &cl.gamma)?;
        let sets_for = |m: usize| -> Vec<Polytope<T>> {
            let s = &suite.subsystems[m];
            (0..=horizon)
                .map(|l| match tightening {
                    Tightening::Dynamic => s.xu_at(l).clone(),
                    Tightening::Static => s.xu_inf.clone(),
                })
                .collect()
        };
        let outlets = cascade.topology.outlet[index]
            .iter()
            .map(|&m| {
                let om = &cascade.subsystems[m];
                OutletContext {
                    index: m,
                    phi: om.phi.clone(),
                    h: om.h.clone(),
                    inlets: om.phi_in.clone(),
                    xu: sets_for(m),
                    w_z: suite.subsystems[m].w_z().clone(),
                }
            })
            .collect();
        Ok(Self {
            index,
            horizon,
            weights,
            phi: cl.phi.clone(),
            gamma: cl.gamma.clone(),
            h: cl.h.clone(),
            inlets: cl.phi_in.clone(),
            stage: sets_for(index),
            o_eps: suite.subsystems[index].o_eps().clone(),
            outlets,
            sigma_input: SigmaInput::default(),
        })
    }

    pub fn nz(&self) -> usize {
        self.phi.nrows()
    }

    pub fn ny(&self) -> usize {
        self.gamma.ncols()
    }
}

/// `P` residual and `P_α` margin checks.
pub fn verify_weights<T: Real>(
    sub: usize,
    w: &Weighting<T>,
    phi: &DMatrix<T>,
    gamma: &DMatrix<T>,
) -> Result<(), RhopError> {
    let residual = w.lyapunov_residual(phi).as_f64();
    if residual > LYAPUNOV_TOL {
        return Err(RhopError::Weights {
            sub,
            msg: format!("Lyapunov residual {residual:.3e}"),
        });
    }
    let margin = w
        .alpha_margin(gamma)
        .map_err(|source| RhopError::Numerics { sub, source })?;
    if margin <= T::zero() {
        return Err(RhopError::Weights {
            sub,
            msg: format!("alpha weight margin {:.3e} is not positive", margin.as_f64()),
        });
    }
    Ok(())
}

/// `P` and `P_α = 2(ΓᵀPΓ + R_α)` for given stage weights.
pub fn compute_terminal_weights<T: Real>(
    phi: &DMatrix<T>,
    gamma: &DMatrix<T>,
    q: DMatrix<T>,
    r_alpha: DMatrix<T>,
) -> Result<Weighting<T>, RhopError> {
    let w = Weighting::terminal(phi, gamma, q, r_alpha).map_err(|source| RhopError::Numerics { sub: 0, source })?;
    verify_weights(0, &w, phi, gamma)?;
    Ok(w)
}

/// Data of the outlet neighbour produced at the previous step.
#[derive(Debug, Clone, PartialEq)]
pub struct OutletInput<T: Real> {
    pub index: usize,
    /// `ẑ_c^m(k−1+t|k−1)`, `t = 0..=N`
    pub prev_pred: Vec<DVector<T>>,
    /// other inlets `j` of the outlet: `(j, ẑ_c^j(k−1+t|k−1), σ̂^j(k+l|k))`
    pub others: Vec<(usize, Vec<DVector<T>>, Vec<DVector<T>>)>,
}

/// Memory from the previous step of this subsystem.
#[derive(Debug, Clone, PartialEq)]
pub struct PreviousData<T: Real> {
    /// `δα̂(k−1+t|k−1)`, `t = 0..N−1`
    pub delta: Vec<DVector<T>>,
    /// `ẑ_c(k−1+t|k−1)`, `t = 0..=N`
    pub own_pred: Vec<DVector<T>>,
    pub outlets: Vec<OutletInput<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RhopInput<T: Real> {
    /// `ẑ_c(k|k)`
    pub z: DVector<T>,
    pub eps_d: DVector<T>,
    pub alpha_prev: DVector<T>,
    pub y_r: DVector<T>,
    pub y_r_prev: DVector<T>,
    /// `ẑ_c^j(k+l|k)`, `l = 0..=N`
    pub inlet_pred: Vec<(usize, Vec<DVector<T>>)>,
    /// `σ̂^j(k+l|k)`, `l = 0..=N`
    pub inlet_sigma: Vec<(usize, Vec<DVector<T>>)>,
    /// absent at the first step: anticipative and interaction rows are skipped
    pub prev: Option<PreviousData<T>>,
}

/// `Δα̂(k+l|k)` for `l = 0..N−1` from the current and previous sequences.
/// Entries of the previous sequence past its horizon count as zero.
pub fn delta_alpha_shift<T: Real>(
    current: &[DVector<T>],
    previous: Option<&[DVector<T>]>,
    y_r: &DVector<T>,
    y_r_prev: &DVector<T>,
) -> Vec<DVector<T>> {
    current
        .iter()
        .enumerate()
        .map(|(l, d)| {
            let old = previous
                .and_then(|p| p.get(l + 1))
                .cloned()
                .unwrap_or_else(|| DVector::zeros(d.len()));
            y_r + d - (y_r_prev + old)
        })
        .collect()
}

/// Previous solution shifted one step with a zero tail.
pub fn shifted_candidate<T: Real>(prev: &[DVector<T>]) -> Vec<DVector<T>> {
    let mut out: Vec<DVector<T>> = prev.iter().skip(1).cloned().collect();
    if let Some(first) = prev.first() {
        out.push(DVector::zeros(first.len()));
    }
    out
}

/// Predicted trajectories, all indexed from `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectories<T: Real> {
    /// `α̂(k+l|k)`, `l = 0..N−1`
    pub alpha: Vec<DVector<T>>,
    pub eps_d: Vec<DVector<T>>,
    pub z_u: Vec<DVector<T>>,
    pub z_c: Vec<DVector<T>>,
    /// `σ̂(k+l|k)`, `l = 0..=N`
    pub sigma: Vec<DVector<T>>,
    /// `Δα̂(k+l|k)`, `l = 0..N−1`
    pub delta_alpha: Vec<DVector<T>>,
    pub outlet_sigma: Vec<(usize, Vec<DVector<T>>)>,
}

#[derive(Debug, Clone, PartialEq)]
struct AffineTrajectories<T: Real> {
    alpha: Vec<Affine<T>>,
    eps_d: Vec<Affine<T>>,
    z_u: Vec<Affine<T>>,
    z_c: Vec<Affine<T>>,
    sigma: Vec<Affine<T>>,
    delta_alpha: Vec<Affine<T>>,
    outlet_sigma: Vec<(usize, Vec<Affine<T>>)>,
}

/// Which constraint family a QP row came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Stage { l: usize },
    Anticipative { outlet: usize, l: usize },
    Interaction { outlet: usize },
    Terminal,
}

/// A built problem: the QP plus the affine prediction maps.
#[derive(Debug, Clone)]
pub struct Rhop<T: Real> {
    pub index: usize,
    pub horizon: usize,
    pub ny: usize,
    pub qp: Qp<T>,
    pub cost_constant: T,
    pub row_kinds: Vec<RowKind>,
    traj: AffineTrajectories<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RhopSolution<T: Real> {
    pub delta: Vec<DVector<T>>,
    pub trajectories: Trajectories<T>,
    pub cost: T,
    pub iterations: usize,
    pub active: Vec<usize>,
    pub kkt: KktResiduals,
    pub max_violation: T,
}

fn block<T: Real>(x: &DVector<T>, l: usize, ny: usize) -> DVector<T> {
    x.rows(l * ny, ny).into_owned()
}

fn check_len<T: Real>(sub: usize, what: &str, v: &[DVector<T>], len: usize) -> Result<(), RhopError> {
    if v.len() < len {
        return Err(RhopError::Dimension {
            sub,
            msg: format!("{what} has {} entries, expected {len}", v.len()),
        });
    }
    Ok(())
}

/// Builds the condensed QP for one subsystem at one step.
pub fn build_rhop<T: Real>(ctx: &RhopContext<T>, input: &RhopInput<T>) -> Result<Rhop<T>, RhopError> {
    let sub = ctx.index + 1;
    let n = ctx.horizon;
    let ny = ctx.ny();
    let nz = ctx.nz();
    let nv = n * ny;
    for (j, p) in &input.inlet_pred {
        check_len(sub, &format!("prediction of inlet {}", j + 1), p, n + 1)?;
    }
    for (j, s) in &input.inlet_sigma {
        check_len(sub, &format!("deviation of inlet {}", j + 1), s, n + 1)?;
    }
    let lookup = |v: &[(usize, Vec<DVector<T>>)], j: usize| v.iter().find(|(k, _)| *k == j).map(|(_, t)| t.clone());

    // α̂(k+l|k) = α(k−1) + Σ_{t≤l} δ_t
    let mut alpha = Vec::with_capacity(n);
    let mut acc = Affine::constant(input.alpha_prev.clone(), nv);
    for l in 0..n {
        acc = acc.add(&Affine::selector(ny, nv, l));
        alpha.push(acc.clone());
    }
    // ε̂ and ẑ_u recursions
    let mut eps_d = vec![Affine::constant(input.eps_d.clone(), nv)];
    let mut z_u = vec![Affine::constant(&input.z - &input.eps_d, nv)];
    for l in 0..n {
        let e = eps_d[l]
            .mul_left(&ctx.phi)
            .add(&Affine::selector(ny, nv, l).mul_left(&ctx.gamma));
        eps_d.push(e);
        let mut drive = DVector::zeros(nz);
        for (j, phi_ij) in &ctx.inlets {
            let pred = lookup(&input.inlet_pred, *j).ok_or_else(|| RhopError::Dimension {
                sub,
                msg: format!("missing prediction of inlet {}", j + 1),
            })?;
            drive += phi_ij * &pred[l];
        }
        let reference = if l == 0 {
            Affine::constant(&input.y_r + &input.alpha_prev, nv)
        } else {
            alpha[l - 1].add_const(&input.y_r)
        };
        z_u.push(
            z_u[l]
                .mul_left(&ctx.phi)
                .add_const(&drive)
                .add(&reference.mul_left(&ctx.gamma)),
        );
    }
    let z_c: Vec<Affine<T>> = z_u.iter().zip(&eps_d).map(|(u, e)| u.add(e)).collect();

    // Δα̂ and σ̂
    let prev_delta = input.prev.as_ref().map(|p| p.delta.as_slice());
    let prev_at = |t: usize| -> DVector<T> {
        prev_delta
            .and_then(|p| p.get(t))
            .cloned()
            .unwrap_or_else(|| DVector::zeros(ny))
    };
    let dr = &input.y_r - &input.y_r_prev;
    let mut delta_alpha = Vec::with_capacity(n);
    for l in 0..n {
        let da = match ctx.sigma_input {
            SigmaInput::Increment => Affine::selector(ny, nv, l).add_const(&(&dr - prev_at(l + 1))),
            SigmaInput::Trajectory => {
                let mut old = input.alpha_prev.clone();
                for t in 1..=l + 1 {
                    old += prev_at(t);
                }
                alpha[l].add_const(&(&dr - old))
            }
        };
        delta_alpha.push(da);
    }
    let mut sigma = vec![Affine::zeros(nz, nv)];
    for l in 0..n {
        let mut drive = DVector::zeros(nz);
        for (j, phi_ij) in &ctx.inlets {
            if let Some(s) = lookup(&input.inlet_sigma, *j) {
                drive += phi_ij * &s[l];
            }
        }
        sigma.push(
            sigma[l]
                .mul_left(&ctx.phi)
                .add_const(&drive)
                .add(&delta_alpha[l].mul_left(&ctx.gamma)),
        );
    }

    let mut f_rows: Vec<DVector<T>> = Vec::new();
    let mut b_rows: Vec<T> = Vec::new();
    let mut kinds = Vec::new();
    let mut push_member = |set: &Polytope<T>, value: &Affine<T>, kind: RowKind| {
        let slack = match kind {
            RowKind::Interaction { .. } => T::lit(TOL_FLAT),
            _ => T::zero(),
        };
        for r in 0..set.n_halfspaces() {
            let normal = set.normals().row(r).transpose();
            // normalᵀ(c + Mδ) ≤ g
            f_rows.push(value.m.transpose() * &normal);
            b_rows.push(set.offsets()[r] + slack - normal.dot(&value.c));
            kinds.push(kind);
        }
    };

    // stage rows
    for l in 1..n {
        push_member(&ctx.stage[l], &z_c[l].mul_left(&ctx.h), RowKind::Stage { l });
    }

    // outlet rows, only with previous-step data
    let mut outlet_sigma = Vec::new();
    if let Some(prev) = &input.prev {
        check_len(sub, "previous sequence", &prev.delta, n)?;
        check_len(sub, "previous prediction", &prev.own_pred, n + 1)?;
        for oc in &ctx.outlets {
            let Some(oi) = prev.outlets.iter().find(|o| o.index == oc.index) else {
                continue;
            };
            check_len(sub, "outlet prediction", &oi.prev_pred, n + 1)?;
            let mut sm = vec![Affine::zeros(oc.phi.nrows(), nv)];
            for l in 0..n {
                let mut next = sm[l].mul_left(&oc.phi);
                for (j, phi_mj) in &oc.inlets {
                    if *j == ctx.index {
                        next = next.add(&sigma[l].mul_left(phi_mj));
                    } else if let Some((_, _, s)) = oi.others.iter().find(|(k, _, _)| k == j) {
                        next = next.add_const(&(phi_mj * &s[l]));
                    }
                }
                sm.push(next);
            }
            for l in 1..n.saturating_sub(1) {
                let value = sm[l].add_const(&oi.prev_pred[l + 1]).mul_left(&oc.h);
                push_member(&oc.xu[l + 1], &value, RowKind::Anticipative { outlet: oc.index, l });
            }
            let mut w = Affine::zeros(oc.phi.nrows(), nv);
            for (j, phi_mj) in &oc.inlets {
                if *j == ctx.index {
                    w = w.add(&sigma[n - 1].add_const(&prev.own_pred[n]).mul_left(phi_mj));
                } else if let Some((_, pred, s)) = oi.others.iter().find(|(k, _, _)| k == j) {
                    w = w.add_const(&(phi_mj * (&pred[n] + &s[n - 1])));
                }
            }
            push_member(&oc.w_z, &w, RowKind::Interaction { outlet: oc.index });
            outlet_sigma.push((oc.index, sm));
        }
    }

    // terminal rows on (ẑ_c(k+N), y_r + α̂(k+N−1))
    let terminal = Affine::stack(&z_c[n], &alpha[n - 1].add_const(&input.y_r));
    push_member(&ctx.o_eps, &terminal, RowKind::Terminal);

    // cost
    let mut h = DMatrix::zeros(nv, nv);
    let mut f = DVector::zeros(nv);
    let mut constant = T::zero();
    let mut add_cost = |v: &Affine<T>, w: &DMatrix<T>| {
        let wm = w * &v.m;
        h += v.m.transpose() * &wm * T::lit(2.0);
        f += wm.transpose() * &v.c * T::lit(2.0);
        constant += (v.c.transpose() * w * &v.c)[0];
    };
    for l in 0..n {
        add_cost(&eps_d[l], &ctx.weights.q);
        add_cost(&Affine::selector(ny, nv, l), &ctx.weights.r_alpha);
    }
    add_cost(&eps_d[n], &ctx.weights.p);
    add_cost(&alpha[n - 1], &ctx.weights.p_alpha);
    let h = crate::numerics::symmetrize(&h);

    let a = DMatrix::from_fn(f_rows.len(), nv, |r, c| f_rows[r][c]);
    let b = DVector::from_vec(b_rows);
    Ok(Rhop {
        index: ctx.index,
        horizon: n,
        ny,
        qp: Qp { h, f, a, b },
        cost_constant: constant,
        row_kinds: kinds,
        traj: AffineTrajectories {
            alpha,
            eps_d,
            z_u,
            z_c,
            sigma,
            delta_alpha,
            outlet_sigma,
        },
    })
}

/// Trajectories for a given sequence without solving.
pub fn predict_trajectories<T: Real>(
    ctx: &RhopContext<T>,
    input: &RhopInput<T>,
    delta: &[DVector<T>],
) -> Result<Trajectories<T>, RhopError> {
    Ok(build_rhop(ctx, input)?.predict(delta))
}

impl<T: Real> Rhop<T> {
    pub fn stack(&self, delta: &[DVector<T>]) -> DVector<T> {
        let mut x = DVector::zeros(self.horizon * self.ny);
        for (l, d) in delta.iter().enumerate().take(self.horizon) {
            x.rows_mut(l * self.ny, self.ny).copy_from(d);
        }
        x
    }

    pub fn unstack(&self, x: &DVector<T>) -> Vec<DVector<T>> {
        (0..self.horizon).map(|l| block(x, l, self.ny)).collect()
    }

    /// Trajectories for a given `δα̂` sequence.
    pub fn predict(&self, delta: &[DVector<T>]) -> Trajectories<T> {
        let x = self.stack(delta);
        let ev = |v: &[Affine<T>]| v.iter().map(|a| a.eval(&x)).collect::<Vec<_>>();
        Trajectories {
            alpha: ev(&self.traj.alpha),
            eps_d: ev(&self.traj.eps_d),
            z_u: ev(&self.traj.z_u),
            z_c: ev(&self.traj.z_c),
            sigma: ev(&self.traj.sigma),
            delta_alpha: ev(&self.traj.delta_alpha),
            outlet_sigma: self.traj.outlet_sigma.iter().map(|(m, s)| (*m, ev(s))).collect(),
        }
    }

    pub fn cost(&self, delta: &[DVector<T>]) -> T {
        self.qp.objective(&self.stack(delta)) + self.cost_constant
    }

    /// Largest violation of any row for a given sequence.
    pub fn max_violation(&self, delta: &[DVector<T>]) -> T {
        self.qp.max_violation(&self.stack(delta))
    }

    pub fn solve(&self) -> Result<RhopSolution<T>, RhopError> {
        let s = solve_qp(&self.qp).map_err(|source| RhopError::Qp {
            sub: self.index + 1,
            source,
        })?;
        let delta = self.unstack(&s.x);
        Ok(RhopSolution {
            trajectories: self.predict(&delta),
            cost: s.objective + self.cost_constant,
            max_violation: self.qp.max_violation(&s.x),
            delta,
            iterations: s.iterations,
            active: s.active,
            kkt: s.kkt,
        })
    }

    /// Plain-text record of a solve.
    ///
    /// ```text
    /// rhop <subsystem> <horizon> <rows>
    /// decision <δ values>
    /// active <row indices>
    /// kkt <stationarity> <primal> <complementarity> <dual>
    /// cost <J*>
    /// ```
    pub fn debug_dump(&self, sol: &RhopSolution<T>) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "rhop {} {} {}", self.index + 1, self.horizon, self.qp.a.nrows());
        let x = self.stack(&sol.delta);
        let vals: Vec<String> = x.iter().map(|v| format!("{:e}", v.as_f64())).collect();
        let _ = writeln!(out, "decision {}", vals.join(" "));
        let act: Vec<String> = sol.active.iter().map(|a| a.to_string()).collect();
        let _ = writeln!(out, "active {}", act.join(" "));
        let k = sol.kkt;
        let _ = writeln!(
            out,
            "kkt {:e} {:e} {:e} {:e}",
            k.stationarity, k.primal, k.complementarity, k.dual
        );
        let _ = writeln!(out, "cost {:e}", sol.cost.as_f64());
        out
    }
}
