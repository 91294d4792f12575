//! Cascade description, neighbour sets and integrator-augmented local loops.
//!
//! Each open-loop subsystem `x⁺ = A x + Σ A_ij x_j + B u + E w`, `y = C x`
//! is augmented with an integrator `x_a⁺ = x_a − C x + ǧ` and closed with
//! `u = −K z`, `z = [x; x_a]`. The governed reference therefore enters
//! through `Γ = [0; I]` and the constraint output is `c = H z = [x; −K z]`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::geometry::{GeometryError, Polytope};
use crate::numerics::{self, NumericsError};
use crate::scalar::Real;

pub const ASSUMPTION_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid cascade topology: {}", .0.join("; "))]
    Topology(Vec<String>),
    #[error("subsystem {0}: output matrix C must have full row rank")]
    RankDeficientOutput(usize),
    #[error("subsystem {sub}: {msg}")]
    Dimension { sub: usize, msg: String },
    #[error("subsystem {sub}: {source}")]
    Numerics { sub: usize, source: NumericsError },
    #[error("subsystem {sub}: {source}")]
    Geometry { sub: usize, source: GeometryError },
    #[error("subsystem {sub}: closed loop is not Schur (spectral radius {radius:.6})")]
    NotSchur { sub: usize, radius: f64 },
}

/// Open-loop data of one subsystem (0-based index in the cascade).
#[derive(Debug, Clone)]
pub struct OpenLoopSubsystem<T: Real> {
    pub a: DMatrix<T>,
    pub b: DMatrix<T>,
    pub c: DMatrix<T>,
    pub e: DMatrix<T>,
    pub x_set: Polytope<T>,
    pub u_set: Polytope<T>,
    pub w_set: Polytope<T>,
}

impl<T: Real> OpenLoopSubsystem<T> {
    pub fn nx(&self) -> usize {
        self.a.nrows()
    }
    pub fn nu(&self) -> usize {
        self.b.ncols()
    }
    pub fn ny(&self) -> usize {
        self.c.nrows()
    }
    pub fn nw(&self) -> usize {
        self.e.ncols()
    }
}

/// Direct influence `A_ij` of subsystem `from` on subsystem `to`.
#[derive(Debug, Clone)]
pub struct Coupling<T: Real> {
    pub from: usize,
    pub to: usize,
    pub a: DMatrix<T>,
}

/// Weights and tolerances used for synthesis and the online problems.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignParams {
    pub horizon: usize,
    pub eps: f64,
    pub eps_rpi: f64,
    pub rhop_q: f64,
    pub rhop_r_alpha: f64,
    pub lqr_q: f64,
    pub lqr_r: f64,
}

impl Default for DesignParams {
    fn default() -> Self {
        Self {
            horizon: 3,
            eps: 1e-3,
            eps_rpi: 1e-2,
            rhop_q: 1.0,
            rhop_r_alpha: 1.0,
            lqr_q: 1.0,
            lqr_r: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CascadeModel<T: Real> {
    pub name: String,
    pub subsystems: Vec<OpenLoopSubsystem<T>>,
    pub couplings: Vec<Coupling<T>>,
    pub design: DesignParams,
}

/// Inlet and outlet neighbour sets, 0-based and sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CascadeTopology {
    pub inlet: Vec<Vec<usize>>,
    pub outlet: Vec<Vec<usize>>,
}

impl CascadeTopology {
    pub fn len(&self) -> usize {
        self.inlet.len()
    }
    pub fn is_empty(&self) -> bool {
        self.inlet.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopologyReport {
    pub topology: CascadeTopology,
    pub violations: Vec<String>,
}

impl TopologyReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Builds neighbour sets from directed edges `(from, to)` and checks the
/// lower-triangular ordering (`from < to`).
pub fn validate_topology(m: usize, edges: &[(usize, usize)]) -> TopologyReport {
    let mut inlet = vec![Vec::new(); m];
    let mut outlet = vec![Vec::new(); m];
    let mut violations = Vec::new();
    for &(from, to) in edges {
        if from >= m || to >= m {
            violations.push(format!("edge {} -> {} refers to a missing subsystem", from + 1, to + 1));
            continue;
        }
        if from >= to {
            violations.push(format!(
                "edge {} -> {} breaks the lower-triangular ordering",
                from + 1,
                to + 1
            ));
            continue;
        }
        if inlet[to].contains(&from) {
            violations.push(format!("duplicate edge {} -> {}", from + 1, to + 1));
            continue;
        }
        inlet[to].push(from);
        outlet[from].push(to);
    }
    for v in inlet.iter_mut().chain(outlet.iter_mut()) {
        v.sort_unstable();
    }
    // the two definitions must mirror each other
    for (i, ins) in inlet.iter().enumerate() {
        for &j in ins {
            if !outlet[j].contains(&i) {
                violations.push(format!("{} is an inlet of {} but not mirrored", j + 1, i + 1));
            }
        }
    }
    TopologyReport {
        topology: CascadeTopology { inlet, outlet },
        violations,
    }
}

impl<T: Real> CascadeModel<T> {
    pub fn len(&self) -> usize {
        self.subsystems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subsystems.is_empty()
    }

    /// Topology from the nonzero couplings.
    pub fn topology_report(&self) -> TopologyReport {
        let edges: Vec<(usize, usize)> = self
            .couplings
            .iter()
            .filter(|c| c.a.iter().any(|v| *v != T::zero()))
            .map(|c| (c.from, c.to))
            .collect();
        validate_topology(self.len(), &edges)
    }

    /// Coupling matrix `A_ij`, if any.
    pub fn coupling(&self, from: usize, to: usize) -> Option<&DMatrix<T>> {
        self.couplings
            .iter()
            .find(|c| c.from == from && c.to == to)
            .map(|c| &c.a)
    }

    fn check_dimensions(&self) -> Result<(), ModelError> {
        for (i, s) in self.subsystems.iter().enumerate() {
            let err = |msg: String| Err(ModelError::Dimension { sub: i + 1, msg });
            let nx = s.nx();
            if s.a.ncols() != nx || s.b.nrows() != nx || s.c.ncols() != nx || s.e.nrows() != nx {
                return err("A, B, C, E have inconsistent shapes".into());
            }
            if s.ny() != s.nu() {
                return err(format!(
                    "{} outputs but {} inputs; tracking needs a square loop",
                    s.ny(),
                    s.nu()
                ));
            }
            if s.x_set.dim() != nx || s.u_set.dim() != s.nu() || s.w_set.dim() != s.nw() {
                return err("constraint set dimensions do not match the model".into());
            }
            for (name, set, n) in [("X", &s.x_set, nx), ("U", &s.u_set, s.nu()), ("W", &s.w_set, s.nw())] {
                if !set.contains(&DVector::zeros(n), T::tol(1e-12)) {
                    return err(format!("{name} does not contain the origin"));
                }
            }
        }
        for c in &self.couplings {
            if c.from >= self.len() || c.to >= self.len() {
                continue;
            }
            let (ni, nj) = (self.subsystems[c.to].nx(), self.subsystems[c.from].nx());
            if c.a.shape() != (ni, nj) {
                return Err(ModelError::Dimension {
                    sub: c.to + 1,
                    msg: format!("coupling from {} must be {ni}x{nj}", c.from + 1),
                });
            }
        }
        Ok(())
    }

    /// Augments, synthesizes LQR gains and closes every local loop.
    pub fn close_loops(&self) -> Result<ClosedLoopCascade<T>, ModelError> {
        let report = self.topology_report();
        if !report.is_valid() {
            return Err(ModelError::Topology(report.violations));
        }
        self.check_dimensions()?;
        let topo = report.topology;
        let mut subs = Vec::with_capacity(self.len());
        for i in 0..self.len() {
            let inlets: Vec<(usize, DMatrix<T>)> = topo.inlet[i]
                .iter()
                .map(|&j| (j, self.coupling(j, i).expect("edge has a coupling").clone()))
                .collect();
            let nz: Vec<usize> = self.subsystems.iter().map(|s| s.nx() + s.ny()).collect();
            let aug = augment_with_integrator(i, &self.subsystems[i], &inlets, &nz)?;
            let nzi = aug.nz();
            let q = DMatrix::identity(nzi, nzi) * T::lit(self.design.lqr_q);
            let r = DMatrix::identity(aug.nu, aug.nu) * T::lit(self.design.lqr_r);
            let k = synthesize_controller(i, &aug, &q, &r)?;
            subs.push(close_loop(i, &aug, &k, &self.subsystems[i])?);
        }
        Ok(ClosedLoopCascade {
            subsystems: subs,
            topology: topo,
            design: self.design,
        })
    }
}

/// Integrator-augmented open loop of one subsystem.
#[derive(Debug, Clone)]
pub struct AugmentedSubsystem<T: Real> {
    pub phi_bar: DMatrix<T>,
    /// input matrix `[B; 0]`
    pub gamma_u: DMatrix<T>,
    /// `[[A_ij, 0], [0, 0]]` acting on the neighbour's augmented state
    pub phi_in: Vec<(usize, DMatrix<T>)>,
    pub omega: DMatrix<T>,
    pub upsilon: DMatrix<T>,
    pub nx: usize,
    pub ny: usize,
    pub nu: usize,
}

impl<T: Real> AugmentedSubsystem<T> {
    pub fn nz(&self) -> usize {
        self.nx + self.ny
    }
}

/// `Φ̄ = [[A, 0], [−C, I]]`, `Γ_u = [B; 0]`, `Ω = [E; 0]`, `Υ = [C, 0]`.
///
/// `nz` lists the augmented dimension of every subsystem so inlet couplings
/// can be padded to act on augmented states.
pub fn augment_with_integrator<T: Real>(
    index: usize,
    sub: &OpenLoopSubsystem<T>,
    inlets: &[(usize, DMatrix<T>)],
    nz: &[usize],
) -> Result<AugmentedSubsystem<T>, ModelError> {
    let (nx, ny, nu, nw) = (sub.nx(), sub.ny(), sub.nu(), sub.nw());
    if numerics::rank(&sub.c, 1e-12) < ny {
        return Err(ModelError::RankDeficientOutput(index + 1));
    }
    let n = nx + ny;
    let mut phi_bar = DMatrix::zeros(n, n);
    phi_bar.view_mut((0, 0), (nx, nx)).copy_from(&sub.a);
    phi_bar.view_mut((nx, 0), (ny, nx)).copy_from(&(-&sub.c));
    phi_bar.view_mut((nx, nx), (ny, ny)).fill_with_identity();
    let mut gamma_u = DMatrix::zeros(n, nu);
    gamma_u.view_mut((0, 0), (nx, nu)).copy_from(&sub.b);
    let mut omega = DMatrix::zeros(n, nw);
    omega.view_mut((0, 0), (nx, nw)).copy_from(&sub.e);
    let mut upsilon = DMatrix::zeros(ny, n);
    upsilon.view_mut((0, 0), (ny, nx)).copy_from(&sub.c);
    let phi_in = inlets
        .iter()
        .map(|(j, a_ij)| {
            let mut m = DMatrix::zeros(n, nz[*j]);
            m.view_mut((0, 0), (nx, a_ij.ncols())).copy_from(a_ij);
            (*j, m)
        })
        .collect();
    Ok(AugmentedSubsystem {
        phi_bar,
        gamma_u,
        phi_in,
        omega,
        upsilon,
        nx,
        ny,
        nu,
    })
}

/// LQR gain for the augmented pair (control `u = −K z`).
pub fn synthesize_controller<T: Real>(
    index: usize,
    aug: &AugmentedSubsystem<T>,
    q: &DMatrix<T>,
    r: &DMatrix<T>,
) -> Result<DMatrix<T>, ModelError> {
    let num = |source| ModelError::Numerics { sub: index + 1, source };
    let (k, _) = numerics::lqr_gain(&aug.phi_bar, &aug.gamma_u, q, r).map_err(num)?;
    let phi = &aug.phi_bar - &aug.gamma_u * &k;
    let radius = numerics::spectral_radius(&phi).map_err(num)?;
    if radius >= T::one() {
        return Err(ModelError::NotSchur {
            sub: index + 1,
            radius: radius.as_f64(),
        });
    }
    Ok(k)
}

/// Locally closed-loop subsystem `z⁺ = Φ z + Σ Φ_ij z_j + Γ ǧ + Ω w`,
/// `y = Υ z`, `c = H z`.
#[derive(Debug, Clone)]
pub struct ClosedLoopSubsystem<T: Real> {
    pub phi: DMatrix<T>,
    pub gamma: DMatrix<T>,
    pub phi_in: Vec<(usize, DMatrix<T>)>,
    pub omega: DMatrix<T>,
    pub upsilon: DMatrix<T>,
    pub h: DMatrix<T>,
    pub k: DMatrix<T>,
    /// `X × U` in the coordinates of `c = [x; u]`
    pub xu: Polytope<T>,
    pub w_set: Polytope<T>,
    pub nx: usize,
    pub nu: usize,
    pub ny: usize,
}

impl<T: Real> ClosedLoopSubsystem<T> {
    pub fn nz(&self) -> usize {
        self.phi.nrows()
    }

    /// `Φ_ij` for inlet `j`, if coupled.
    pub fn phi_from(&self, j: usize) -> Option<&DMatrix<T>> {
        self.phi_in.iter().find(|(k, _)| *k == j).map(|(_, m)| m)
    }

    /// Steady-state map `G = (I − Φ)⁻¹ Γ` from a constant reference to `z`.
    pub fn steady_gain(&self) -> Result<DMatrix<T>, NumericsError> {
        let n = self.nz();
        numerics::solve_linear_matrix(&(DMatrix::identity(n, n) - &self.phi), &self.gamma)
    }
}

pub fn close_loop<T: Real>(
    index: usize,
    aug: &AugmentedSubsystem<T>,
    k: &DMatrix<T>,
    sub: &OpenLoopSubsystem<T>,
) -> Result<ClosedLoopSubsystem<T>, ModelError> {
    let n = aug.nz();
    if k.shape() != (aug.nu, n) {
        return Err(ModelError::Dimension {
            sub: index + 1,
            msg: format!("gain must be {}x{n}", aug.nu),
        });
    }
    let phi = &aug.phi_bar - &aug.gamma_u * k;
    let mut gamma = DMatrix::zeros(n, aug.ny);
    gamma.view_mut((aug.nx, 0), (aug.ny, aug.ny)).fill_with_identity();
    let mut h = DMatrix::zeros(aug.nx + aug.nu, n);
    h.view_mut((0, 0), (aug.nx, aug.nx)).fill_with_identity();
    h.view_mut((aug.nx, 0), (aug.nu, n)).copy_from(&(-k));
    Ok(ClosedLoopSubsystem {
        phi,
        gamma,
        phi_in: aug.phi_in.clone(),
        omega: aug.omega.clone(),
        upsilon: aug.upsilon.clone(),
        h,
        k: k.clone(),
        xu: sub.x_set.cartesian(&sub.u_set),
        w_set: sub.w_set.clone(),
        nx: aug.nx,
        nu: aug.nu,
        ny: aug.ny,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assumption1Report {
    pub spectral_radius: f64,
    pub schur: bool,
    /// `max |Υ(I−Φ)⁻¹Γ − I|`
    pub dc_gain_residual: f64,
    /// `max |Υ(I−Φ)⁻¹Φ_ij|` per inlet neighbour
    pub coupling_residuals: Vec<(usize, f64)>,
}

impl Assumption1Report {
    pub fn passed(&self) -> bool {
        self.schur
            && self.dc_gain_residual <= ASSUMPTION_TOL
            && self.coupling_residuals.iter().all(|(_, r)| *r <= ASSUMPTION_TOL)
    }
}

/// Numerical check of Schur stability, unit steady-state gain and
/// output decoupling from the inlet neighbours.
pub fn check_assumption1<T: Real>(cl: &ClosedLoopSubsystem<T>) -> Assumption1Report {
    let n = cl.nz();
    let radius = numerics::spectral_radius(&cl.phi)
        .map(|r| r.as_f64())
        .unwrap_or(f64::INFINITY);
    let i_minus = DMatrix::identity(n, n) - &cl.phi;
    let solve = |rhs: &DMatrix<T>| -> f64 {
        match numerics::solve_linear_matrix(&i_minus, rhs) {
            Ok(x) => numerics::max_abs(&(&cl.upsilon * x)).as_f64(),
            Err(_) => f64::INFINITY,
        }
    };
    let dc = match numerics::solve_linear_matrix(&i_minus, &cl.gamma) {
        Ok(x) => {
            let g = &cl.upsilon * x;
            numerics::max_abs(&(g - DMatrix::identity(cl.ny, cl.ny))).as_f64()
        }
        Err(_) => f64::INFINITY,
    };
    Assumption1Report {
        spectral_radius: radius,
        schur: radius < 1.0,
        dc_gain_residual: dc,
        coupling_residuals: cl.phi_in.iter().map(|(j, m)| (*j, solve(m))).collect(),
    }
}

/// All locally closed loops of a cascade.
#[derive(Debug, Clone)]
pub struct ClosedLoopCascade<T: Real> {
    pub subsystems: Vec<ClosedLoopSubsystem<T>>,
    pub topology: CascadeTopology,
    pub design: DesignParams,
}

impl<T: Real> ClosedLoopCascade<T> {
    pub fn len(&self) -> usize {
        self.subsystems.len()
    }
    pub fn is_empty(&self) -> bool {
        self.subsystems.is_empty()
    }
}
