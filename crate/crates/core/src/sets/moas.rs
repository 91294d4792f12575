//! Disturbed maximal output admissible sets and their decentralized chain.
//!
//! The extended state is `ξ = (z, ỹ)` with `ξ⁺ = 𝒜 ξ + [I; 0] w_z`,
//! `𝒜 = [[Φ, Γ], [0, I]]` and constrained output `𝒞 ξ = H z`.

use nalgebra::{DMatrix, DVector};

use super::SetsError;
use crate::geometry::{Ball, Polytope, SetExpr};
use crate::model::{ClosedLoopCascade, ClosedLoopSubsystem};
use crate::numerics;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MoasOptions {
    pub eps: f64,
    /// expected convergence horizon of the tightening sequence
    pub k_max: usize,
    /// hard cap on MOAS iterations
    pub cap: usize,
    pub converge_tol: f64,
}

impl Default for MoasOptions {
    fn default() -> Self {
        Self {
            eps: 1e-3,
            k_max: 60,
            cap: 500,
            converge_tol: 1e-9,
        }
    }
}

/// `𝒜` and `𝒞` of the extended model.
pub fn extended_model<T: Real>(cl: &ClosedLoopSubsystem<T>) -> (DMatrix<T>, DMatrix<T>) {
    let (nz, ny) = (cl.nz(), cl.ny);
    let n = nz + ny;
    let mut a = DMatrix::zeros(n, n);
    a.view_mut((0, 0), (nz, nz)).copy_from(&cl.phi);
    a.view_mut((0, nz), (nz, ny)).copy_from(&cl.gamma);
    a.view_mut((nz, nz), (ny, ny)).fill_with_identity();
    let mut c = DMatrix::zeros(cl.h.nrows(), n);
    c.view_mut((0, 0), (cl.h.nrows(), nz)).copy_from(&cl.h);
    (a, c)
}

/// Rank of `[𝒞; 𝒞𝒜; …; 𝒞𝒜^{n−1}]`.
pub fn observability_rank<T: Real>(a: &DMatrix<T>, c: &DMatrix<T>) -> usize {
    let n = a.nrows();
    let p = c.nrows();
    let mut o = DMatrix::zeros(n * p, n);
    let mut block = c.clone();
    for k in 0..n {
        o.view_mut((k * p, 0), (p, n)).copy_from(&block);
        block = &block * a;
    }
    numerics::rank(&o, 1e-10)
}

#[derive(Debug, Clone)]
pub struct Moas<T: Real> {
    /// `O_ε` in `(z, ỹ)` coordinates
    pub o_eps: Polytope<T>,
    /// `XU_ε = XU_(∞) ⊖ B_ε`
    pub xu_eps: Polytope<T>,
    /// tightening sequence `XU_(k)` seeded at `XU_∞`, up to convergence
    pub xu_seq: Vec<Polytope<T>>,
    /// iteration after which all new rows were redundant
    pub determined_at: usize,
}

/// Disturbed MOAS for one subsystem.
pub fn moas<T: Real>(
    index: usize,
    cl: &ClosedLoopSubsystem<T>,
    xu_inf: &Polytope<T>,
    w_z: &Polytope<T>,
    opts: &MoasOptions,
) -> Result<Moas<T>, SetsError> {
    let sub = index + 1;
    let (a, c) = extended_model(cl);
    let n = a.nrows();
    let rank = observability_rank(&a, &c);
    if rank < n {
        return Err(SetsError::NotObservable { sub, rank, dim: n });
    }

    // XU_(k+1) = XU_(k) ⊖ H Φ^k W_z until the offsets settle
    let w_z_expr = SetExpr::poly(w_z.clone());
    let mut xu_seq = vec![xu_inf.clone()];
    let mut h_phi = cl.h.clone();
    let tol = T::lit(opts.converge_tol);
    loop {
        let k = xu_seq.len() - 1;
        if k >= opts.cap {
            return Err(SetsError::MoasNotDetermined { sub, cap: opts.cap });
        }
        let next = xu_seq[k].pontryagin_diff(&SetExpr::image(h_phi.clone(), w_z_expr.clone())?)?;
        let change = (next.offsets() - xu_seq[k].offsets()).amax();
        if next.is_empty() {
            return Err(SetsError::EmptyMoas { sub });
        }
        xu_seq.push(next);
        h_phi = &h_phi * &cl.phi;
        if change < tol {
            break;
        }
        if k + 1 == opts.k_max {
            log::warn!(
                "subsystem {sub}: tightening sequence not settled after {} steps",
                opts.k_max
            );
        }
    }
    let converged_at = xu_seq.len() - 1;
    let limit = xu_seq.last().expect("sequence is nonempty");
    let xu_eps = limit.pontryagin_diff(&Ball {
        radius: T::lit(opts.eps),
        dim: limit.dim(),
    })?;
    if xu_eps.is_empty() {
        return Err(SetsError::EmptyMoas { sub });
    }

    // steady rows: H (I − Φ)⁻¹ Γ ỹ ∈ XU_ε
    let (nz, ny) = (cl.nz(), cl.ny);
    let gain = cl.steady_gain().map_err(|source| SetsError::Numerics { sub, source })?;
    let steady = xu_eps.normals() * &cl.h * gain;
    let mut f = DMatrix::zeros(steady.nrows(), n);
    f.view_mut((0, nz), (steady.nrows(), ny)).copy_from(&steady);
    let mut g = xu_eps.offsets().clone();

    let mut ca_k = c.clone();
    let mut determined_at = None;
    for k in 0..=opts.cap {
        let xu_k = &xu_seq[k.min(converged_at)];
        let rows = xu_k.normals() * &ca_k;
        let current = Polytope::new(f.clone(), g.clone())?;
        if current.is_empty() {
            return Err(SetsError::EmptyMoas { sub });
        }
        let mut added = false;
        for r in 0..rows.nrows() {
            let row = rows.row(r).transpose();
            if row.amax() <= T::tol(1e-12) {
                continue;
            }
            if !current.is_redundant(&row, xu_k.offsets()[r]) {
                let last = f.nrows();
                f = f.insert_row(last, T::zero());
                f.set_row(last, &row.transpose());
                g = g.push(xu_k.offsets()[r]);
                added = true;
            }
        }
        if !added && k >= converged_at {
            determined_at = Some(k);
            break;
        }
        ca_k = &ca_k * &a;
    }
    let Some(determined_at) = determined_at else {
        return Err(SetsError::MoasNotDetermined { sub, cap: opts.cap });
    };
    let o_eps = Polytope::new(f, g)?.minimal()?;
    if o_eps.is_empty() {
        return Err(SetsError::EmptyMoas { sub });
    }
    Ok(Moas {
        o_eps,
        xu_eps,
        xu_seq,
        determined_at,
    })
}

/// Per-subsystem output of the decentralized chain.
#[derive(Debug, Clone)]
pub struct MoasSuite<T: Real> {
    pub moas: Moas<T>,
    /// `[I 0] O_ε`
    pub o_z: Polytope<T>,
    /// `⊕_j Φ_ij O_z^j`, `{0}` for subsystems without inlets
    pub w_z: Polytope<T>,
}

/// Runs the chain `i = 1..M`: `W_z^i = ⊕ Φ_ij O_z^j`, `O_ε^i`, `O_z^i`.
pub fn moas_decentralized<T: Real>(
    cascade: &ClosedLoopCascade<T>,
    xu_inf: &[Polytope<T>],
    opts: &MoasOptions,
) -> Result<Vec<MoasSuite<T>>, SetsError> {
    let mut out: Vec<MoasSuite<T>> = Vec::with_capacity(cascade.len());
    for (i, cl) in cascade.subsystems.iter().enumerate() {
        let nz = cl.nz();
        let mut w_z = Polytope::point(&DVector::zeros(nz));
        for &j in &cascade.topology.inlet[i] {
            let phi_ij = cl.phi_from(j).expect("inlet coupling present");
            let image = out[j].o_z.affine_image(phi_ij)?;
            w_z = w_z.minkowski_sum(&image)?;
        }
        let m = moas(i, cl, &xu_inf[i], &w_z, opts)?;
        let o_z = m.o_eps.project_leading(nz)?;
        out.push(MoasSuite { moas: m, o_z, w_z });
    }
    Ok(out)
}
