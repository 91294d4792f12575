//! Tightened constraint sets, RPI bounds and admissible sets per subsystem.

mod export;
mod moas;
mod tighten;

use thiserror::Error;

pub use export::{
    export_suite, load_suite, load_suite_lenient, Diagnostics, Manifest, ManifestEntry, SuiteFiles, MANIFEST_FILE,
};
pub use moas::{extended_model, moas, moas_decentralized, observability_rank, Moas, MoasOptions, MoasSuite};
pub use tighten::{
    constraint_directions, mrpi_outer, steady_tightened, steady_we, template_directions, transient_tightened,
    we_schedule, Mrpi, MRPI_INFLATE, MRPI_MAX_POWER,
};

use crate::geometry::{GeometryError, Polytope, SetExpr};
use crate::model::ClosedLoopCascade;
use crate::numerics::NumericsError;
use crate::scalar::Real;

pub const ENLARGE_HINT: &str = "consider suitably enlarging the admissible sets of the upstream subsystems feeding it";

#[derive(Debug, Error)]
pub enum SetsError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("subsystem {sub}: {source}")]
    Numerics { sub: usize, source: NumericsError },
    #[error(
        "subsystem {sub}: transient tightened set XU({k}) is empty; constraints are too tight for the disturbance"
    )]
    EmptyTightened { sub: usize, k: usize },
    #[error("subsystem {sub}: steady-state tightened set is empty")]
    EmptySteady { sub: usize },
    #[error("subsystem {sub}: RPI outer bound did not contract within {cap} powers")]
    MrpiIterationCap { sub: usize, cap: usize },
    #[error("subsystem {sub}: extended pair is not observable (rank {rank} < {dim})")]
    NotObservable { sub: usize, rank: usize, dim: usize },
    #[error("subsystem {sub}: admissible set not finitely determined within {cap} steps")]
    MoasNotDetermined { sub: usize, cap: usize },
    #[error("subsystem {sub}: output admissible set is empty; {ENLARGE_HINT}")]
    EmptyMoas { sub: usize },
    #[error("set file {file}: {msg}")]
    Corrupted { file: String, msg: String },
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl SetsError {
    /// 1-based subsystem the error refers to, if any.
    pub fn subsystem(&self) -> Option<usize> {
        match self {
            SetsError::Numerics { sub, .. }
            | SetsError::EmptyTightened { sub, .. }
            | SetsError::EmptySteady { sub }
            | SetsError::MrpiIterationCap { sub, .. }
            | SetsError::NotObservable { sub, .. }
            | SetsError::MoasNotDetermined { sub, .. }
            | SetsError::EmptyMoas { sub } => Some(*sub),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthesisOptions {
    /// length of the transient schedule
    pub k_max: usize,
    pub eps_rpi: f64,
    pub moas: MoasOptions,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self {
            k_max: 60,
            eps_rpi: 1e-2,
            moas: MoasOptions::default(),
        }
    }
}

impl SynthesisOptions {
    pub fn from_design(d: &crate::model::DesignParams) -> Self {
        let mut o = Self::default();
        o.eps_rpi = d.eps_rpi;
        o.moas.eps = d.eps;
        o
    }
}

#[derive(Debug, Clone)]
pub struct SubsystemSets<T: Real> {
    /// transient disturbance bound of the error model
    pub we: SetExpr<T>,
    /// `XU(0..=k_max)`
    pub xu: Vec<Polytope<T>>,
    pub we_steady: SetExpr<T>,
    pub f_inf: Mrpi<T>,
    pub xu_inf: Polytope<T>,
    pub moas: MoasSuite<T>,
}

impl<T: Real> SubsystemSets<T> {
    /// `XU(l)`, held at the last computed entry beyond the schedule.
    pub fn xu_at(&self, l: usize) -> &Polytope<T> {
        &self.xu[l.min(self.xu.len() - 1)]
    }

    pub fn o_eps(&self) -> &Polytope<T> {
        &self.moas.moas.o_eps
    }

    pub fn xu_eps(&self) -> &Polytope<T> {
        &self.moas.moas.xu_eps
    }

    pub fn w_z(&self) -> &Polytope<T> {
        &self.moas.w_z
    }
}

#[derive(Debug, Clone)]
pub struct SetSuite<T: Real> {
    pub subsystems: Vec<SubsystemSets<T>>,
    pub options: SynthesisOptions,
}

/// Full offline synthesis for a closed-loop cascade.
pub fn synthesize<T: Real>(cascade: &ClosedLoopCascade<T>, opts: &SynthesisOptions) -> Result<SetSuite<T>, SetsError> {
    let schedule = we_schedule(cascade, opts.k_max)?;
    let mut xu = Vec::with_capacity(cascade.len());
    let mut mrpi: Vec<Mrpi<T>> = Vec::with_capacity(cascade.len());
    let mut we_steady = Vec::with_capacity(cascade.len());
    let mut xu_inf = Vec::with_capacity(cascade.len());
    for (i, cl) in cascade.subsystems.iter().enumerate() {
        xu.push(transient_tightened(i, cl, &schedule[i][..opts.k_max])?);
        let inlets: Vec<(usize, &Mrpi<T>)> = cascade.topology.inlet[i].iter().map(|&j| (j, &mrpi[j])).collect();
        let w = steady_we(cl, &inlets)?;
        let f = mrpi_outer(i, &cl.phi, &w, opts.eps_rpi, &constraint_directions(cl))?;
        log::debug!(
            "subsystem {}: RPI bound with s = {}, alpha = {:.3e}",
            i + 1,
            f.s,
            f.alpha.as_f64()
        );
        xu_inf.push(steady_tightened(i, cl, &f.set)?);
        we_steady.push(w);
        mrpi.push(f);
    }
    let moas = moas_decentralized(cascade, &xu_inf, &opts.moas)?;
    let subsystems = schedule
        .into_iter()
        .zip(xu)
        .zip(we_steady)
        .zip(mrpi)
        .zip(xu_inf)
        .zip(moas)
        .map(|(((((we, xu), we_steady), f_inf), xu_inf), moas)| SubsystemSets {
            we: we[0].clone(),
            xu,
            we_steady,
            f_inf,
            xu_inf,
            moas,
        })
        .collect();
    Ok(SetSuite {
        subsystems,
        options: *opts,
    })
}
