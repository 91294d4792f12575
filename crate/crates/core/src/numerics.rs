//! Dense small-matrix linear algebra and matrix-equation solvers.
//!
//! Everything here works on `nalgebra` dynamic matrices. Dimensions in this
//! crate stay tiny (a handful of states per subsystem), so the solvers favour
//! exactness and determinism over speed: the Lyapunov equation is solved by
//! Kronecker vectorization, the Riccati equation by fixed-point iteration.

use nalgebra::{DMatrix, DVector, Schur, SymmetricEigen, SVD};
use thiserror::Error;

use crate::scalar::Real;

/// Relative-change stop for the Riccati fixed point.
pub const DARE_REL_TOL: f64 = 1e-12;
/// Iteration cap for the Riccati fixed point.
pub const DARE_MAX_ITER: usize = 10_000;
/// Pivot ratio below which a matrix is declared singular (condition ~1e12).
pub const SINGULAR_PIVOT_RATIO: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("matrix is singular to working precision")]
    Singular,
    #[error("expected a square matrix, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("eigenvalue iteration did not converge")]
    NoConvergence,
    #[error("matrix is not Schur stable (spectral radius {0:.6})")]
    Unstable(f64),
    #[error("Riccati iteration did not converge after {0} iterations")]
    RiccatiNoConvergence(usize),
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
}

fn require_square<T: Real>(a: &DMatrix<T>) -> Result<usize, NumericsError> {
    if a.nrows() != a.ncols() {
        return Err(NumericsError::NotSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    Ok(a.nrows())
}

/// Largest absolute entry.
pub fn max_abs<T: Real>(a: &DMatrix<T>) -> T {
    a.iter().fold(T::zero(), |m, v| m.max(v.abs()))
}

pub fn max_abs_vec<T: Real>(v: &DVector<T>) -> T {
    v.iter().fold(T::zero(), |m, x| m.max(x.abs()))
}

pub fn symmetrize<T: Real>(a: &DMatrix<T>) -> DMatrix<T> {
    (a + a.transpose()) * T::lit(0.5)
}

/// Solves `A x = b` with partial-pivoting LU.
pub fn solve_linear<T: Real>(a: &DMatrix<T>, b: &DVector<T>) -> Result<DVector<T>, NumericsError> {
    let n = require_square(a)?;
    if b.len() != n {
        return Err(NumericsError::Dimension(format!(
            "right-hand side has length {} for a {n}x{n} system",
            b.len()
        )));
    }
    let lu = a.clone().lu();
    let u = lu.u();
    let scale = max_abs(a);
    if scale == T::zero() {
        return Err(NumericsError::Singular);
    }
    let floor = scale * T::tol(SINGULAR_PIVOT_RATIO);
    if u.diagonal().iter().any(|p| p.abs() <= floor) {
        return Err(NumericsError::Singular);
    }
    lu.solve(b).ok_or(NumericsError::Singular)
}

/// Solves `A X = B` column by column.
pub fn solve_linear_matrix<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> Result<DMatrix<T>, NumericsError> {
    let mut out = DMatrix::zeros(a.ncols(), b.ncols());
    for c in 0..b.ncols() {
        let x = solve_linear(a, &b.column(c).into_owned())?;
        out.set_column(c, &x);
    }
    Ok(out)
}

/// Maximum eigenvalue modulus, from the real Schur form.
pub fn spectral_radius<T: Real>(a: &DMatrix<T>) -> Result<T, NumericsError> {
    let n = require_square(a)?;
    if n == 0 {
        return Ok(T::zero());
    }
    let schur = Schur::try_new(a.clone(), T::default_epsilon(), 10_000).ok_or(NumericsError::NoConvergence)?;
    let eig = schur.complex_eigenvalues();
    Ok(eig
        .iter()
        .map(|c| (c.re * c.re + c.im * c.im).sqrt())
        .fold(T::zero(), |m, v| m.max(v)))
}

/// Schur stability test.
///
/// Uses the spectral radius; if the eigenvalue iteration fails, falls back to
/// checking that the power series `Σ‖Aᵏ‖` has converged within 2000 terms.
pub fn is_schur<T: Real>(a: &DMatrix<T>) -> Result<bool, NumericsError> {
    match spectral_radius(a) {
        Ok(rho) => Ok(rho < T::one()),
        Err(NumericsError::NoConvergence) => {
            let mut power = a.clone();
            for _ in 0..2000 {
                if max_abs(&power) < T::tol(1e-14) {
                    return Ok(true);
                }
                power = &power * a;
            }
            Ok(false)
        }
        Err(e) => Err(e),
    }
}

/// Solves `(I − Φᵀ⊗Φᵀ) vec(P) = vec(Q)`, i.e. `ΦᵀPΦ − P = −Q`, without
/// any stability or symmetry checks.
pub fn kron_solve_vectorized<T: Real>(phi: &DMatrix<T>, q: &DMatrix<T>) -> Result<DMatrix<T>, NumericsError> {
    let n = require_square(phi)?;
    if q.shape() != (n, n) {
        return Err(NumericsError::Dimension(format!(
            "Q is {}x{}, expected {n}x{n}",
            q.nrows(),
            q.ncols()
        )));
    }
    let phi_t = phi.transpose();
    let lhs = DMatrix::<T>::identity(n * n, n * n) - phi_t.kronecker(&phi_t);
    // column-major storage is exactly vec(·)
    let rhs = DVector::from_column_slice(q.as_slice());
    let x = solve_linear(&lhs, &rhs)?;
    Ok(DMatrix::from_column_slice(n, n, x.as_slice()))
}

/// Discrete Lyapunov equation `ΦᵀPΦ − P = −Q` for Schur `Φ`.
pub fn solve_dlyap<T: Real>(phi: &DMatrix<T>, q: &DMatrix<T>) -> Result<DMatrix<T>, NumericsError> {
    require_square(phi)?;
    let rho = spectral_radius(phi)?;
    if rho >= T::one() {
        return Err(NumericsError::Unstable(rho.as_f64()));
    }
    let p = kron_solve_vectorized(phi, q)?;
    Ok(symmetrize(&p))
}

/// Residual `‖ΦᵀPΦ − P + Q‖_max`.
pub fn dlyap_residual<T: Real>(phi: &DMatrix<T>, p: &DMatrix<T>, q: &DMatrix<T>) -> T {
    max_abs(&(phi.transpose() * p * phi - p + q))
}

/// Discrete algebraic Riccati equation by fixed-point iteration of
/// `P ← Q + AᵀPA − AᵀPB (R + BᵀPB)⁻¹ BᵀPA`, starting from `P = Q`.
pub fn solve_dare<T: Real>(
    a: &DMatrix<T>,
    b: &DMatrix<T>,
    q: &DMatrix<T>,
    r: &DMatrix<T>,
) -> Result<DMatrix<T>, NumericsError> {
    let n = require_square(a)?;
    let m = require_square(r)?;
    if b.shape() != (n, m) || q.shape() != (n, n) {
        return Err(NumericsError::Dimension(format!(
            "A {n}x{n}, B {}x{}, Q {}x{}, R {m}x{m}",
            b.nrows(),
            b.ncols(),
            q.nrows(),
            q.ncols()
        )));
    }
    let a_t = a.transpose();
    let b_t = b.transpose();
    let mut p = q.clone();
    for _ in 0..DARE_MAX_ITER {
        let s = r + &b_t * &p * b;
        let bpa = &b_t * &p * a;
        let gain = solve_linear_matrix(&s, &bpa)?;
        let next = symmetrize(&(q + &a_t * &p * a - &a_t * &p * b * gain));
        let change = max_abs(&(&next - &p));
        let scale = T::one().max(max_abs(&next));
        p = next;
        if change <= T::tol(DARE_REL_TOL) * scale {
            return Ok(p);
        }
        if !p.iter().all(|v| v.is_finite()) {
            break;
        }
    }
    Err(NumericsError::RiccatiNoConvergence(DARE_MAX_ITER))
}

/// Infinite-horizon LQR gain `K = (R + BᵀPB)⁻¹BᵀPA` (control `u = −Kx`)
/// together with the Riccati solution `P`.
pub fn lqr_gain<T: Real>(
    a: &DMatrix<T>,
    b: &DMatrix<T>,
    q: &DMatrix<T>,
    r: &DMatrix<T>,
) -> Result<(DMatrix<T>, DMatrix<T>), NumericsError> {
    let p = solve_dare(a, b, q, r)?;
    let b_t = b.transpose();
    let k = solve_linear_matrix(&(r + &b_t * &p * b), &(&b_t * &p * a))?;
    Ok((k, p))
}

/// Smallest eigenvalue of the symmetric part of `a`.
pub fn min_eigenvalue_symmetric<T: Real>(a: &DMatrix<T>) -> Result<T, NumericsError> {
    require_square(a)?;
    let eig = SymmetricEigen::new(symmetrize(a));
    Ok(eig.eigenvalues.iter().fold(T::max_value().unwrap(), |m, v| m.min(*v)))
}

pub fn is_positive_definite<T: Real>(a: &DMatrix<T>) -> bool {
    a.is_square() && symmetrize(a).cholesky().is_some()
}

/// Numerical rank from singular values, relative threshold `rel_tol`.
pub fn rank<T: Real>(a: &DMatrix<T>, rel_tol: f64) -> usize {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0;
    }
    let sv = SVD::new(a.clone(), false, false).singular_values;
    let top = sv.iter().fold(T::zero(), |m, v| m.max(*v));
    if top == T::zero() {
        return 0;
    }
    let thr = top * T::tol(rel_tol);
    sv.iter().filter(|s| **s > thr).count()
}

/// Weighting matrices of one receding-horizon problem.
///
/// `p` solves `ΦᵀPΦ − P = −Q`; `p_alpha` must dominate `ΓᵀPΓ + R_α`.
#[derive(Debug, Clone, PartialEq)]
pub struct Weighting<T: Real> {
    pub q: DMatrix<T>,
    pub r_alpha: DMatrix<T>,
    pub p: DMatrix<T>,
    pub p_alpha: DMatrix<T>,
}

impl<T: Real> Weighting<T> {
    /// `P` from the Lyapunov equation and `P_α = 2(ΓᵀPΓ + R_α)`.
    pub fn terminal(
        phi: &DMatrix<T>,
        gamma: &DMatrix<T>,
        q: DMatrix<T>,
        r_alpha: DMatrix<T>,
    ) -> Result<Self, NumericsError> {
        if !is_positive_definite(&q) || !is_positive_definite(&r_alpha) {
            return Err(NumericsError::NotPositiveDefinite);
        }
        let p = solve_dlyap(phi, &q)?;
        let p_alpha = symmetrize(&((gamma.transpose() * &p * gamma + &r_alpha) * T::lit(2.0)));
        Ok(Self { q, r_alpha, p, p_alpha })
    }

    pub fn lyapunov_residual(&self, phi: &DMatrix<T>) -> T {
        dlyap_residual(phi, &self.p, &self.q)
    }

    /// Minimum eigenvalue of `P_α − ΓᵀPΓ − R_α`; must be positive.
    pub fn alpha_margin(&self, gamma: &DMatrix<T>) -> Result<T, NumericsError> {
        min_eigenvalue_symmetric(&(&self.p_alpha - gamma.transpose() * &self.p * gamma - &self.r_alpha))
    }

    /// Largest asymmetry over the four matrices.
    pub fn asymmetry(&self) -> T {
        [&self.q, &self.r_alpha, &self.p, &self.p_alpha]
            .iter()
            .map(|m| max_abs(&(*m - m.transpose())))
            .fold(T::zero(), |a, b| a.max(b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;
    use nalgebra::dvector;

    #[test]
    fn identity_and_diagonal_solves() {
        let b = dvector![3.0, -1.0];
        assert_eq!(solve_linear(&DMatrix::<f64>::identity(2, 2), &b).unwrap(), b);
        let x = solve_linear(&dmatrix![2.0, 0.0; 0.0, 4.0], &dvector![2.0, 8.0]).unwrap();
        assert_relative_eq!(x, dvector![1.0, 2.0], epsilon = 1e-15);
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let a = dmatrix![1.0, 2.0; 2.0, 4.0];
        assert_eq!(solve_linear(&a, &dvector![1.0, 1.0]), Err(NumericsError::Singular));
        assert!(matches!(
            solve_linear(&dmatrix![1.0, 2.0], &dvector![1.0]),
            Err(NumericsError::NotSquare { .. })
        ));
    }

    #[test]
    fn spectral_radius_simple_cases() {
        assert_relative_eq!(spectral_radius(&DMatrix::<f64>::identity(2, 2)).unwrap(), 1.0);
        assert_relative_eq!(
            spectral_radius(&dmatrix![0.5, 0.0; 0.0, 0.2]).unwrap(),
            0.5,
            epsilon = 1e-14
        );
        // rotation by 90 degrees scaled by 0.9: complex pair of modulus 0.9
        assert_relative_eq!(
            spectral_radius(&dmatrix![0.0, -0.9; 0.9, 0.0]).unwrap(),
            0.9,
            epsilon = 1e-12
        );
    }

    #[test]
    fn dlyap_trivial_cases() {
        let q = dmatrix![2.0, 0.5; 0.5, 1.0];
        assert_relative_eq!(solve_dlyap(&DMatrix::zeros(2, 2), &q).unwrap(), q, epsilon = 1e-15);
        let p = solve_dlyap(&dmatrix![0.5], &dmatrix![1.0]).unwrap();
        assert_relative_eq!(p[(0, 0)], 4.0 / 3.0, epsilon = 1e-14);
        assert!(matches!(
            solve_dlyap(&dmatrix![1.0], &dmatrix![1.0]),
            Err(NumericsError::Unstable(_))
        ));
    }

    #[test]
    fn dare_scalar_golden_ratio() {
        let one = dmatrix![1.0];
        let p = solve_dare(&one, &one, &one, &one).unwrap();
        assert_relative_eq!(p[(0, 0)], (1.0 + 5f64.sqrt()) / 2.0, epsilon = 1e-10);
    }

    #[test]
    fn dare_without_input_is_lyapunov() {
        let a = dmatrix![0.5, 0.1; 0.0, 0.3];
        let q = DMatrix::<f64>::identity(2, 2);
        let p = solve_dare(&a, &DMatrix::zeros(2, 1), &q, &dmatrix![1.0]).unwrap();
        assert_relative_eq!(p, solve_dlyap(&a, &q).unwrap(), epsilon = 1e-10);
    }

    #[test]
    fn lqr_stabilizes_double_integrator() {
        let a = dmatrix![1.0, 1.0; 0.0, 1.0];
        let b = dmatrix![0.5; 1.0];
        let (k, _) = lqr_gain(&a, &b, &DMatrix::identity(2, 2), &dmatrix![1.0]).unwrap();
        assert!(spectral_radius(&(a - b * k)).unwrap() < 1.0);
    }

    #[test]
    fn terminal_weights_scalar() {
        let w = Weighting::terminal(&dmatrix![0.5], &dmatrix![1.0], dmatrix![1.0], dmatrix![1.0]).unwrap();
        assert_relative_eq!(w.p[(0, 0)], 4.0 / 3.0, epsilon = 1e-14);
        assert_relative_eq!(w.p_alpha[(0, 0)], 14.0 / 3.0, epsilon = 1e-14);
        assert!(w.alpha_margin(&dmatrix![1.0]).unwrap() > 0.0);
    }

    #[test]
    fn single_precision_path() {
        let p = solve_dlyap(&dmatrix![0.5f32], &dmatrix![1.0f32]).unwrap();
        assert!((p[(0, 0)] - 4.0 / 3.0).abs() < 1e-5);
        assert!(spectral_radius(&dmatrix![0.5f32, 0.0; 0.0, 0.2]).unwrap() < 0.51);
    }

    #[test]
    fn rank_detects_deficiency() {
        assert_eq!(rank(&dmatrix![1.0, 2.0; 2.0, 4.0], 1e-10), 1);
        assert_eq!(rank(&DMatrix::<f64>::identity(3, 3), 1e-10), 3);
    }
}
