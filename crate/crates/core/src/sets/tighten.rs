//! Error-set schedules, transient tightening and the mRPI outer bound.

use nalgebra::{DMatrix, DVector};

use super::SetsError;
use crate::geometry::{GeometryError, Polytope, SetExpr, SupportFn};
use crate::model::{ClosedLoopCascade, ClosedLoopSubsystem};
use crate::scalar::Real;

pub const MRPI_MAX_POWER: usize = 200;
/// Relative width of the box added to `W_e` before building the template.
pub const MRPI_INFLATE: f64 = 1e-4;

/// `W_e^i(k) = ⊕_j Φ_ij W_e^j(k) ⊕ Ω_ii W^i` for `k = 0..=k_max`.
///
/// The recursion has no explicit `k` dependence, so every entry of a row
/// shares one expression tree.
pub fn we_schedule<T: Real>(cascade: &ClosedLoopCascade<T>, k_max: usize) -> Result<Vec<Vec<SetExpr<T>>>, SetsError> {
    let mut base: Vec<SetExpr<T>> = Vec::with_capacity(cascade.len());
    for (i, cl) in cascade.subsystems.iter().enumerate() {
        let mut terms = vec![SetExpr::image(cl.omega.clone(), SetExpr::poly(cl.w_set.clone()))?];
        for &j in &cascade.topology.inlet[i] {
            let phi_ij = cl.phi_from(j).expect("inlet coupling present").clone();
            terms.push(SetExpr::image(phi_ij, base[j].clone())?);
        }
        base.push(SetExpr::sum(cl.nz(), terms)?);
    }
    Ok(base.into_iter().map(|e| vec![e; k_max + 1]).collect())
}

/// `XU(0) = X×U`, `XU(k+1) = XU(k) ⊖ H Φ^k W_e(k)` for `k < we.len()`.
pub fn transient_tightened<T: Real>(
    index: usize,
    cl: &ClosedLoopSubsystem<T>,
    we: &[SetExpr<T>],
) -> Result<Vec<Polytope<T>>, SetsError> {
    let mut out = vec![cl.xu.clone()];
    let mut h_phi = cl.h.clone();
    for (k, w) in we.iter().enumerate() {
        let step = SetExpr::image(h_phi.clone(), w.clone())?;
        let next = out[k].pontryagin_diff(&step)?;
        if next.is_empty() {
            return Err(SetsError::EmptyTightened {
                sub: index + 1,
                k: k + 1,
            });
        }
        out.push(next);
        h_phi = &h_phi * &cl.phi;
    }
    Ok(out)
}

/// Outer approximation of the minimal RPI set of `e⁺ = Φ e + w`, `w ∈ W`.
#[derive(Debug, Clone)]
pub struct Mrpi<T: Real> {
    /// `(1 − α)⁻¹ ⊕_{j<s} Φ^j T`
    pub set: SetExpr<T>,
    /// full-dimensional template outer bound `T ⊇ W`
    pub template: Polytope<T>,
    pub alpha: T,
    pub s: usize,
}

impl<T: Real> Mrpi<T> {
    fn zero(n: usize) -> Self {
        Self {
            set: SetExpr::zero(n),
            template: Polytope::point(&DVector::zeros(n)),
            alpha: T::zero(),
            s: 0,
        }
    }

    /// Explicit outer H-rep along the template normals.
    pub fn outer_polytope(&self) -> Result<Polytope<T>, GeometryError> {
        let f = self.template.normals().clone();
        let mut g = DVector::zeros(f.nrows());
        for r in 0..f.nrows() {
            g[r] = self.set.support(&f.row(r).transpose())?;
        }
        Polytope::new(f, g)
    }
}

/// Unit directions `{−1, 0, 1}^n \ {0}` followed by `extra`, deduplicated.
pub fn template_directions<T: Real>(n: usize, extra: &[DVector<T>]) -> Vec<DVector<T>> {
    let mut dirs: Vec<DVector<T>> = Vec::new();
    let mut push = |v: DVector<T>| {
        let norm = v.norm();
        if norm <= T::tol(1e-12) {
            return;
        }
        let u = v / norm;
        if !dirs.iter().any(|d| (d - &u).amax() <= T::tol(1e-12)) {
            dirs.push(u);
        }
    };
    let total = 3usize.pow(n as u32);
    for code in 0..total {
        let mut c = code;
        let v = DVector::from_fn(n, |_, _| {
            let digit = c % 3;
            c /= 3;
            T::lit(digit as f64 - 1.0)
        });
        push(v);
    }
    for e in extra {
        push(e.clone());
    }
    dirs
}

/// Finds `s`, `α` with `Φ^s T ⊆ α T` for a template bound `T` of `W` and
/// returns `(1 − α)⁻¹ ⊕_{j<s} Φ^j T`, which is RPI and contains the minimal
/// RPI set. `α` is kept small enough that the scaling stays within
/// `1 + eps_rpi`.
pub fn mrpi_outer<T: Real>(
    index: usize,
    phi: &DMatrix<T>,
    w: &SetExpr<T>,
    eps_rpi: f64,
    extra_dirs: &[DVector<T>],
) -> Result<Mrpi<T>, SetsError> {
    let n = phi.nrows();
    let mut scale = T::zero();
    for k in 0..n {
        let mut e = DVector::zeros(n);
        e[k] = T::one();
        scale = scale.max(w.support(&e)?).max(w.support(&-e)?);
    }
    if scale <= T::tol(1e-14) {
        return Ok(Mrpi::zero(n));
    }
    let delta = scale * T::lit(MRPI_INFLATE);
    let dirs = template_directions(n, extra_dirs);
    let mut f = DMatrix::zeros(dirs.len(), n);
    let mut g = DVector::zeros(dirs.len());
    for (r, d) in dirs.iter().enumerate() {
        f.set_row(r, &d.transpose());
        g[r] = w.support(d)? + delta * d.lp_norm(1);
    }
    let template = Polytope::new(f, g)?.with_computed_vertices()?;
    let target = T::lit(eps_rpi / (2.0 * (1.0 + eps_rpi)));
    let mut phi_s = phi.clone();
    for s in 1..=MRPI_MAX_POWER {
        let phi_s_t = phi_s.transpose();
        let mut alpha = T::zero();
        for r in 0..template.n_halfspaces() {
            let d = template.normals().row(r).transpose();
            alpha = alpha.max(template.support(&(&phi_s_t * d))? / template.offsets()[r]);
        }
        if alpha <= target {
            let mut terms = Vec::with_capacity(s);
            let mut p = DMatrix::identity(n, n);
            for _ in 0..s {
                terms.push(SetExpr::image(p.clone(), SetExpr::poly(template.clone()))?);
                p = &p * phi;
            }
            let gain = DMatrix::identity(n, n) / (T::one() - alpha);
            return Ok(Mrpi {
                set: SetExpr::image(gain, SetExpr::sum(n, terms)?)?,
                template,
                alpha,
                s,
            });
        }
        phi_s = &phi_s * phi;
    }
    Err(SetsError::MrpiIterationCap {
        sub: index + 1,
        cap: MRPI_MAX_POWER,
    })
}

/// Steady-state disturbance bound `⊕_j Φ_ij F_∞^j ⊕ Ω W` of the error model.
pub fn steady_we<T: Real>(
    cl: &ClosedLoopSubsystem<T>,
    inlet_mrpi: &[(usize, &Mrpi<T>)],
) -> Result<SetExpr<T>, SetsError> {
    let mut terms = vec![SetExpr::image(cl.omega.clone(), SetExpr::poly(cl.w_set.clone()))?];
    for (j, m) in inlet_mrpi {
        let phi_ij = cl.phi_from(*j).expect("inlet coupling present").clone();
        terms.push(SetExpr::image(phi_ij, m.set.clone())?);
    }
    Ok(SetExpr::sum(cl.nz(), terms)?)
}

/// `XU_∞ = (X×U) ⊖ H F_∞`.
pub fn steady_tightened<T: Real>(
    index: usize,
    cl: &ClosedLoopSubsystem<T>,
    f_inf: &SetExpr<T>,
) -> Result<Polytope<T>, SetsError> {
    let image = SetExpr::image(cl.h.clone(), f_inf.clone())?;
    let out = cl.xu.pontryagin_diff(&image)?;
    if out.is_empty() {
        return Err(SetsError::EmptySteady { sub: index + 1 });
    }
    Ok(out)
}

/// Constraint normals pulled back to the state space, `Hᵀ f`.
pub fn constraint_directions<T: Real>(cl: &ClosedLoopSubsystem<T>) -> Vec<DVector<T>> {
    let ht = cl.h.transpose();
    (0..cl.xu.n_halfspaces())
        .map(|r| &ht * cl.xu.normals().row(r).transpose())
        .collect()
}
