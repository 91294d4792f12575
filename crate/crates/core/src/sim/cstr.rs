//! Three jacketed CSTRs in series, linearized and sampled.

use nalgebra::{dmatrix, dvector, DMatrix};

use crate::geometry::Polytope;
use crate::model::{CascadeModel, Coupling, DesignParams, OpenLoopSubsystem};
use crate::scalar::Real;

/// Nominal parameters of the nonlinear reactor model (not used by the
/// linear design, kept for reports).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CstrParameters {
    /// J/(g K)
    pub cp: f64,
    /// L/min
    pub q: f64,
    /// L
    pub v: f64,
    /// K
    pub e_over_r: f64,
    /// J/mol
    pub delta_h: f64,
    /// 1/min
    pub k0: f64,
    /// J/(min K)
    pub ua: f64,
    /// g/L
    pub rho: f64,
    /// mol/L
    pub c_af: f64,
    /// K
    pub t_f: f64,
    pub t_c: f64,
    pub t_bar: f64,
    /// mol/L
    pub c_a_bar: f64,
    /// min
    pub sampling_time: f64,
}

pub const CSTR_PARAMETERS: CstrParameters = CstrParameters {
    cp: 0.239,
    q: 100.0,
    v: 100.0,
    e_over_r: 8750.0,
    delta_h: 5e4,
    k0: 7.2e10,
    ua: 5e4,
    rho: 1000.0,
    c_af: 1.0,
    t_f: 300.0,
    t_c: 300.0,
    t_bar: 301.15,
    c_a_bar: 0.98296,
    sampling_time: 0.6,
};

pub const CSTR_COUNT: usize = 3;
/// `|ΔT| ≤ 5`
pub const TEMPERATURE_BOUND: f64 = 5.0;
/// `|ΔT_c| ≤ 3`
pub const COOLANT_BOUND: f64 = 3.0;
/// Box on the concentration deviation. The reactor model leaves it free;
/// with `|ΔC_A| ≤ 1` the downstream admissible sets come out empty.
pub const CONCENTRATION_BOUND: f64 = 0.3;
pub const DISTURBANCE_BOUND: [f64; 2] = [0.05, 0.5];

fn lit<T: Real>(m: DMatrix<f64>) -> DMatrix<T> {
    m.map(T::lit)
}

/// One reactor: state `(ΔC_A, ΔT)`, input `ΔT_c`, output `ΔT`.
pub fn cstr_subsystem<T: Real>() -> OpenLoopSubsystem<T> {
    let x_bound = dvector![CONCENTRATION_BOUND, TEMPERATURE_BOUND].map(T::lit);
    let u_bound = dvector![COOLANT_BOUND].map(T::lit);
    let w_bound = dvector![DISTURBANCE_BOUND[0], DISTURBANCE_BOUND[1]].map(T::lit);
    OpenLoopSubsystem {
        a: lit(dmatrix![0.54271, -3e-4; 0.73488, 0.19196]),
        b: lit(dmatrix![-3e-4; 0.6152]),
        c: lit(dmatrix![0.0, 1.0]),
        e: DMatrix::identity(2, 2),
        x_set: Polytope::symmetric_box(&x_bound).expect("box"),
        u_set: Polytope::symmetric_box(&u_bound).expect("box"),
        w_set: Polytope::symmetric_box(&w_bound).expect("box"),
    }
}

/// The chain `1 → 2 → 3` with `A_{i,i−1} = 0.2 I` and the case-study weights.
pub fn cstr_case_study<T: Real>() -> CascadeModel<T> {
    let couplings = (1..CSTR_COUNT)
        .map(|i| Coupling {
            from: i - 1,
            to: i,
            a: DMatrix::identity(2, 2) * T::lit(0.2),
        })
        .collect();
    CascadeModel {
        name: "cstr-cascade".into(),
        subsystems: (0..CSTR_COUNT).map(|_| cstr_subsystem()).collect(),
        couplings,
        design: DesignParams::default(),
    }
}
