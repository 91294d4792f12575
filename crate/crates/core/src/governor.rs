//! Online reference governor over the cascade.
//!
//! Subsystems are solved in index order each step. Subsystem `i` reads the
//! fresh step-`k` predictions of its inlets and the step-`k−1` predictions
//! of its outlets; every read is recorded so the order can be checked.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::geometry::Polytope;
use crate::model::{ClosedLoopCascade, ClosedLoopSubsystem};
use crate::rhop::{
    build_rhop, shifted_candidate, solve_qp, OutletInput, PreviousData, Qp, QpError, RhopContext, RhopError, RhopInput,
    RhopSolution, SigmaInput, Tightening, Trajectories,
};
use crate::scalar::Real;
use crate::sets::SetSuite;

#[derive(Debug, Error)]
pub enum GovernorError {
    #[error(transparent)]
    Rhop(#[from] RhopError),
    #[error("subsystem {sub}: {msg}")]
    Input { sub: usize, msg: String },
    #[error("event log {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Variant {
    /// step-indexed tightening, measured initial state
    Dct,
    /// steady tightening, nominal-model initial state
    Sct,
}

impl Variant {
    pub fn tightening(self) -> Tightening {
        match self {
            Variant::Dct => Tightening::Dynamic,
            Variant::Sct => Tightening::Static,
        }
    }
}

/// What subsystem `i` kept from its last solve.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsystemMemory<T: Real> {
    /// `α(k−1)`
    pub alpha_prev: DVector<T>,
    /// `δα̂(·|k−1)`
    pub delta: Vec<DVector<T>>,
    /// `ẑ_c(·|k−1)`
    pub pred: Vec<DVector<T>>,
    /// `σ̂(·|k−1)`
    pub sigma: Vec<DVector<T>>,
    pub g_check: DVector<T>,
    pub y_r: DVector<T>,
    /// `ε_d(k)`, already advanced by the last applied increment
    pub eps_d: DVector<T>,
    /// nominal model state, used by the static variant
    pub z_nominal: DVector<T>,
    /// step at which `delta`, `pred` and `sigma` were produced
    pub produced_at: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GovernorState<T: Real> {
    pub k: usize,
    pub subsystems: Vec<SubsystemMemory<T>>,
}

impl<T: Real> GovernorState<T> {
    /// Zero correction, zero sequences, predictions held at `z0`.
    pub fn initial(z0: &[DVector<T>], ny: &[usize], horizon: usize) -> Self {
        let subsystems = z0
            .iter()
            .zip(ny)
            .map(|(z, &p)| SubsystemMemory {
                alpha_prev: DVector::zeros(p),
                delta: vec![DVector::zeros(p); horizon],
                pred: vec![z.clone(); horizon + 1],
                sigma: vec![DVector::zeros(z.len()); horizon + 1],
                g_check: DVector::zeros(p),
                y_r: DVector::zeros(p),
                eps_d: DVector::zeros(z.len()),
                z_nominal: z.clone(),
                produced_at: None,
            })
            .collect();
        Self { k: 0, subsystems }
    }
}

/// One recorded read of another subsystem's data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Access {
    pub reader: usize,
    pub source: usize,
    /// step at which the data was produced
    pub produced_at: usize,
    /// read from the previous step's memory on purpose
    pub stale: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubsystemOutcome<T: Real> {
    pub g_check: DVector<T>,
    pub alpha: DVector<T>,
    pub delta: DVector<T>,
    /// `ε_d(k)` used by this solve
    pub eps_d: DVector<T>,
    pub feasible: bool,
    pub fallback: bool,
    pub cost: T,
    /// smallest row slack of the applied sequence, negative if violated
    pub margin: T,
    pub iterations: usize,
    pub kkt: f64,
    pub solution: Trajectories<T>,
    pub dump: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome<T: Real> {
    pub k: usize,
    pub subsystems: Vec<SubsystemOutcome<T>>,
    pub accesses: Vec<Access>,
}

impl<T: Real> StepOutcome<T> {
    /// Reads that break the sequential order, empty when causal.
    pub fn causality_violations(&self) -> Vec<Access> {
        self.accesses
            .iter()
            .filter(|a| {
                if a.stale {
                    a.produced_at + 1 != self.k
                } else {
                    a.source >= a.reader || a.produced_at != self.k
                }
            })
            .copied()
            .collect()
    }
}

/// Row of the step-level event log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Event {
    pub k: usize,
    pub subsystem: usize,
    pub feasible: bool,
    pub fallback: bool,
    pub cost: f64,
    pub margin: f64,
    pub iterations: usize,
    pub kkt: f64,
    /// `optimal`, or the solver error behind a fallback
    pub status: String,
}

pub struct Governor<T: Real> {
    pub variant: Variant,
    pub horizon: usize,
    cascade: ClosedLoopCascade<T>,
    contexts: Vec<RhopContext<T>>,
    state: Option<GovernorState<T>>,
    events: Vec<Event>,
    pub debug: bool,
}

impl<T: Real> Governor<T> {
    pub fn new(
        cascade: &ClosedLoopCascade<T>,
        suite: &SetSuite<T>,
        variant: Variant,
        horizon: usize,
    ) -> Result<Self, GovernorError> {
        let contexts = (0..cascade.len())
            .map(|i| RhopContext::new(i, cascade, suite, variant.tightening(), horizon))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            variant,
            horizon,
            cascade: cascade.clone(),
            contexts,
            state: None,
            events: Vec::new(),
            debug: false,
        })
    }

    pub fn set_sigma_input(&mut self, mode: SigmaInput) {
        for c in &mut self.contexts {
            c.sigma_input = mode;
        }
    }

    pub fn contexts(&self) -> &[RhopContext<T>] {
        &self.contexts
    }

    pub fn state(&self) -> Option<&GovernorState<T>> {
        self.state.as_ref()
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    /// One governor step from measured states `z` and references `y_r`.
    pub fn step(&mut self, z: &[DVector<T>], y_r: &[DVector<T>]) -> Result<StepOutcome<T>, GovernorError> {
        let m = self.cascade.len();
        if z.len() != m || y_r.len() != m {
            return Err(GovernorError::Input {
                sub: 0,
                msg: format!("expected {m} states and references"),
            });
        }
        for i in 0..m {
            let cl = &self.cascade.subsystems[i];
            if z[i].len() != cl.nz() || y_r[i].len() != cl.ny {
                return Err(GovernorError::Input {
                    sub: i + 1,
                    msg: "state or reference has the wrong length".into(),
                });
            }
        }
        let n = self.horizon;
        let state = self.state.get_or_insert_with(|| {
            let ny: Vec<usize> = self.cascade.subsystems.iter().map(|c| c.ny).collect();
            let mut s = GovernorState::initial(z, &ny, n);
            for (mem, r) in s.subsystems.iter_mut().zip(y_r) {
                mem.y_r = r.clone();
            }
            s
        });
        let k = state.k;
        let first = state.subsystems.iter().all(|s| s.produced_at.is_none());
        // previous-step memory, untouched by this step's commits
        let before = state.subsystems.clone();
        let mut fresh: Vec<Option<(Vec<DVector<T>>, Vec<DVector<T>>)>> = vec![None; m];
        let mut outcomes = Vec::with_capacity(m);
        let mut accesses = Vec::new();

        for i in 0..m {
            let ctx = &self.contexts[i];
            let mem = &state.subsystems[i];
            let z_init = match self.variant {
                Variant::Dct => z[i].clone(),
                Variant::Sct => mem.z_nominal.clone(),
            };
            let mut inlet_pred = Vec::new();
            let mut inlet_sigma = Vec::new();
            for (j, _) in &ctx.inlets {
                let (p, s) = fresh[*j].clone().expect("inlets are solved first");
                accesses.push(Access {
                    reader: i,
                    source: *j,
                    produced_at: k,
                    stale: false,
                });
                inlet_pred.push((*j, p));
                inlet_sigma.push((*j, s));
            }
            let prev = if first {
                None
            } else {
                let mut outlets = Vec::new();
                for oc in &ctx.outlets {
                    let om = &before[oc.index];
                    accesses.push(Access {
                        reader: i,
                        source: oc.index,
                        produced_at: om.produced_at.expect("outlet has solved before"),
                        stale: true,
                    });
                    let mut others = Vec::new();
                    for (j, _) in &oc.inlets {
                        if *j == i {
                            continue;
                        }
                        let jm = &before[*j];
                        accesses.push(Access {
                            reader: i,
                            source: *j,
                            produced_at: jm.produced_at.expect("inlet has solved before"),
                            stale: true,
                        });
                        // σ̂ of a later inlet is not available yet this step
                        let sigma = match &fresh[*j] {
                            Some((_, s)) => {
                                accesses.push(Access {
                                    reader: i,
                                    source: *j,
                                    produced_at: k,
                                    stale: false,
                                });
                                s.clone()
                            }
                            None => vec![DVector::zeros(jm.sigma[0].len()); n + 1],
                        };
                        others.push((*j, jm.pred.clone(), sigma));
                    }
                    outlets.push(OutletInput {
                        index: oc.index,
                        prev_pred: om.pred.clone(),
                        others,
                    });
                }
                Some(PreviousData {
                    delta: mem.delta.clone(),
                    own_pred: mem.pred.clone(),
                    outlets,
                })
            };
            let input = RhopInput {
                z: z_init,
                eps_d: mem.eps_d.clone(),
                alpha_prev: mem.alpha_prev.clone(),
                y_r: y_r[i].clone(),
                y_r_prev: mem.y_r.clone(),
                inlet_pred,
                inlet_sigma,
                prev,
            };
            let rhop = build_rhop(ctx, &input)?;
            let (delta, solution, feasible, fallback, cost, iterations, kkt, dump, status) = match rhop.solve() {
                Ok(sol) => {
                    let dump = self.debug.then(|| rhop.debug_dump(&sol));
                    let RhopSolution {
                        delta,
                        trajectories,
                        cost,
                        iterations,
                        kkt,
                        ..
                    } = sol;
                    (
                        delta,
                        trajectories,
                        true,
                        false,
                        cost,
                        iterations,
                        kkt.max(),
                        dump,
                        "optimal".to_string(),
                    )
                }
                Err(RhopError::Qp { source, .. }) => {
                    log::warn!(
                        "step {k}, subsystem {}: {source}; applying the shifted previous sequence",
                        i + 1
                    );
                    let candidate = if first {
                        vec![DVector::zeros(ctx.ny()); n]
                    } else {
                        shifted_candidate(&mem.delta)
                    };
                    let traj = rhop.predict(&candidate);
                    let cost = rhop.cost(&candidate);
                    let infeasible = matches!(source, QpError::Infeasible { .. });
                    (
                        candidate,
                        traj,
                        !infeasible,
                        true,
                        cost,
                        0,
                        f64::NAN,
                        None,
                        source.to_string(),
                    )
                }
                Err(e) => return Err(e.into()),
            };
            let margin = -rhop.max_violation(&delta);
            let margin = if rhop.qp.a.nrows() == 0 { T::zero() } else { margin };
            let d0 = delta[0].clone();
            let alpha = &mem.alpha_prev + &d0;
            let g_check = &y_r[i] + &alpha;
            fresh[i] = Some((solution.z_c.clone(), solution.sigma.clone()));
            self.events.push(Event {
                k,
                subsystem: i + 1,
                feasible,
                fallback,
                cost: cost.as_f64(),
                margin: margin.as_f64(),
                iterations,
                kkt,
                status,
            });
            outcomes.push(SubsystemOutcome {
                g_check,
                alpha,
                delta: d0,
                eps_d: mem.eps_d.clone(),
                feasible,
                fallback,
                cost,
                margin,
                iterations,
                kkt,
                solution,
                dump,
            });
            // commit this subsystem's memory after its own read of it
            let cl = &self.cascade.subsystems[i];
            let mem = &mut state.subsystems[i];
            let out = outcomes.last().expect("just pushed");
            mem.eps_d = &cl.phi * &mem.eps_d + &cl.gamma * &out.delta;
            mem.alpha_prev = out.alpha.clone();
            mem.delta = delta;
            mem.pred = out.solution.z_c.clone();
            mem.sigma = out.solution.sigma.clone();
            mem.g_check = out.g_check.clone();
            mem.y_r = y_r[i].clone();
            mem.produced_at = Some(k);
        }

        // nominal model advance
        let z_nom: Vec<DVector<T>> = state.subsystems.iter().map(|s| s.z_nominal.clone()).collect();
        for (i, cl) in self.cascade.subsystems.iter().enumerate() {
            let mut next = &cl.phi * &z_nom[i] + &cl.gamma * &outcomes[i].g_check;
            for (j, phi_ij) in &cl.phi_in {
                next += phi_ij * &z_nom[*j];
            }
            state.subsystems[i].z_nominal = next;
        }
        state.k += 1;
        let out = StepOutcome {
            k,
            subsystems: outcomes,
            accesses,
        };
        debug_assert!(out.causality_violations().is_empty());
        Ok(out)
    }

    /// Writes the event log as CSV.
    pub fn write_event_log(&self, path: &Path) -> Result<(), GovernorError> {
        let err = |source: std::io::Error| GovernorError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut w = csv::Writer::from_path(path).map_err(|e| err(e.into()))?;
        for e in &self.events {
            w.serialize(e).map_err(|e| err(e.into()))?;
        }
        w.flush().map_err(err)?;
        Ok(())
    }

    /// Event log as CSV text.
    pub fn event_log_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for e in &self.events {
            w.serialize(e).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory write")).expect("ascii")
    }
}

/// `argmin ‖α‖²_{P_α}` subject to `H (I − Φ)⁻¹ Γ (y_r + α) ∈ XU_ε`.
pub fn steady_admissible_alpha<T: Real>(
    cl: &ClosedLoopSubsystem<T>,
    xu_eps: &Polytope<T>,
    y_r: &DVector<T>,
    p_alpha: &DMatrix<T>,
) -> Result<DVector<T>, QpError> {
    if xu_eps.is_empty() {
        return Err(QpError::Infeasible {
            residual: f64::INFINITY,
        });
    }
    let gain = cl.steady_gain().map_err(|_| QpError::Singular)?;
    steady_admissible_alpha_from_gain(&(&cl.h * gain), xu_eps, y_r, p_alpha)
}

/// Same problem for an explicit steady map `S`: `S (y_r + α) ∈ set`.
pub fn steady_admissible_alpha_from_gain<T: Real>(
    steady: &DMatrix<T>,
    set: &Polytope<T>,
    y_r: &DVector<T>,
    p_alpha: &DMatrix<T>,
) -> Result<DVector<T>, QpError> {
    let a = set.normals() * steady;
    let b = set.offsets() - &a * y_r;
    let qp = Qp {
        h: p_alpha * T::lit(2.0),
        f: DVector::zeros(y_r.len()),
        a,
        b,
    };
    Ok(solve_qp(&qp)?.x)
}
