//! Plant loop driven by the governor.

use nalgebra::DVector;
use thiserror::Error;

use super::disturbance::{disturbance_schedule, DisturbanceKind};
use super::scenario::{GovernorChoice, Scenario};
use super::trace::{Trace, TraceRow};
use crate::governor::{steady_admissible_alpha, Access, Event, Governor, GovernorError, Variant};
use crate::model::ClosedLoopCascade;
use crate::rhop::QpError;
use crate::scalar::Real;
use crate::sets::SetSuite;

/// Abort threshold on `‖z‖`.
pub const BLOW_UP: f64 = 1e6;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Governor(#[from] GovernorError),
    #[error("state of subsystem {sub} exceeded {BLOW_UP:e} at step {k}")]
    BlowUp { sub: usize, k: usize },
    #[error("scenario: {0}")]
    Scenario(String),
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: Trace,
    pub events: Vec<Event>,
    pub causality_violations: Vec<(usize, Access)>,
    /// `α_ad` for the final references, absent without a governor
    pub alpha_ad: Option<Vec<Vec<f64>>>,
}

fn to_f64<T: Real>(v: &DVector<T>) -> Vec<f64> {
    v.iter().map(|x| x.as_f64()).collect()
}

/// Runs `scenario` from `z0` (zero when absent).
pub fn simulate<T: Real>(
    cascade: &ClosedLoopCascade<T>,
    suite: &SetSuite<T>,
    scenario: &Scenario,
    z0: Option<&[DVector<T>]>,
) -> Result<RunOutput, SimError> {
    run(cascade, suite, scenario, z0, None)
}

/// As [`simulate`], handing the text dump of every solve to `dump` as
/// `(k, subsystem index from 0, text)`.
pub fn simulate_with<T: Real>(
    cascade: &ClosedLoopCascade<T>,
    suite: &SetSuite<T>,
    scenario: &Scenario,
    z0: Option<&[DVector<T>]>,
    mut dump: impl FnMut(usize, usize, &str),
) -> Result<RunOutput, SimError> {
    run(cascade, suite, scenario, z0, Some(&mut dump))
}

fn run<T: Real>(
    cascade: &ClosedLoopCascade<T>,
    suite: &SetSuite<T>,
    scenario: &Scenario,
    z0: Option<&[DVector<T>]>,
    mut dump: Option<&mut dyn FnMut(usize, usize, &str)>,
) -> Result<RunOutput, SimError> {
    let m = cascade.len();
    if scenario.references.len() != m {
        return Err(SimError::Scenario(format!(
            "{} reference schedules for {m} subsystems",
            scenario.references.len()
        )));
    }
    if scenario.disturbance == DisturbanceKind::Tabulated && cascade.subsystems.iter().any(|c| c.omega.ncols() != 2) {
        return Err(SimError::Scenario(
            "tabulated disturbances need two disturbance inputs".into(),
        ));
    }
    for (i, cl) in cascade.subsystems.iter().enumerate() {
        for s in &scenario.references[i].segments {
            if s.value.len() != cl.ny {
                return Err(SimError::Scenario(format!(
                    "reference of subsystem {} has {} entries, expected {}",
                    i + 1,
                    s.value.len(),
                    cl.ny
                )));
            }
        }
    }
    let mut governor = match scenario.governor {
        GovernorChoice::Dct => Some(Governor::new(cascade, suite, Variant::Dct, scenario.horizon)?),
        GovernorChoice::Sct => Some(Governor::new(cascade, suite, Variant::Sct, scenario.horizon)?),
        GovernorChoice::None => None,
    };
    if let Some(g) = governor.as_mut() {
        g.set_sigma_input(scenario.sigma_input);
        g.debug = dump.is_some();
    }
    let mut z: Vec<DVector<T>> = match z0 {
        Some(z0) => z0.to_vec(),
        None => cascade.subsystems.iter().map(|c| DVector::zeros(c.nz())).collect(),
    };
    let mut trace = Trace::default();
    let mut violations = Vec::new();
    for k in 0..scenario.steps {
        let y_r: Vec<DVector<T>> = cascade
            .subsystems
            .iter()
            .enumerate()
            .map(|(i, c)| DVector::from_iterator(c.ny, scenario.references[i].at(k, c.ny).into_iter().map(T::lit)))
            .collect();
        let w: Vec<DVector<T>> = disturbance_schedule(scenario.disturbance, k, scenario.seed, m)
            .into_iter()
            .zip(&cascade.subsystems)
            .map(|(w, c)| match scenario.disturbance {
                DisturbanceKind::Zero => DVector::zeros(c.omega.ncols()),
                DisturbanceKind::Tabulated => DVector::from_iterator(2, w.into_iter().map(T::lit)),
            })
            .collect();
        let outcome = match governor.as_mut() {
            Some(g) => {
                let out = g.step(&z, &y_r)?;
                violations.extend(out.causality_violations().into_iter().map(|a| (k, a)));
                if let Some(f) = dump.as_mut() {
                    for (i, s) in out.subsystems.iter().enumerate() {
                        if let Some(text) = &s.dump {
                            f(k, i, text);
                        }
                    }
                }
                Some(out)
            }
            None => None,
        };
        let g_check: Vec<DVector<T>> = match &outcome {
            Some(o) => o.subsystems.iter().map(|s| s.g_check.clone()).collect(),
            None => y_r.clone(),
        };
        for (i, cl) in cascade.subsystems.iter().enumerate() {
            let hz = &cl.h * &z[i];
            let margin = -cl.xu.max_violation(&hz);
            let sub = outcome.as_ref().map(|o| &o.subsystems[i]);
            trace.rows.push(TraceRow {
                k,
                i: i + 1,
                z: to_f64(&z[i]),
                y: to_f64(&(&cl.upsilon * &z[i])),
                u: to_f64(&hz.rows(cl.nx, cl.nu).into_owned()),
                w: to_f64(&w[i]),
                y_r: to_f64(&y_r[i]),
                g_check: to_f64(&g_check[i]),
                alpha: sub.map_or_else(|| vec![0.0; cl.ny], |s| to_f64(&s.alpha)),
                eps_d: sub.map_or(0.0, |s| s.eps_d.norm().as_f64()),
                feasible: sub.is_none_or(|s| s.feasible),
                fallback: sub.is_some_and(|s| s.fallback),
                margin: margin.as_f64(),
            });
        }
        let mut next = Vec::with_capacity(m);
        for (i, cl) in cascade.subsystems.iter().enumerate() {
            let mut zn = &cl.phi * &z[i] + &cl.gamma * &g_check[i] + &cl.omega * &w[i];
            for (j, phi_ij) in &cl.phi_in {
                zn += phi_ij * &z[*j];
            }
            if !(zn.norm().as_f64() <= BLOW_UP) {
                return Err(SimError::BlowUp { sub: i + 1, k });
            }
            next.push(zn);
        }
        z = next;
    }

    let alpha_ad = match &governor {
        Some(g) => {
            let last = scenario.steps.saturating_sub(1);
            let mut out = Vec::with_capacity(m);
            for (i, cl) in cascade.subsystems.iter().enumerate() {
                let y_r = DVector::from_iterator(cl.ny, scenario.references[i].at(last, cl.ny).into_iter().map(T::lit));
                let a =
                    steady_admissible_alpha(cl, suite.subsystems[i].xu_eps(), &y_r, &g.contexts()[i].weights.p_alpha)
                        .map(|a| to_f64(&a))
                        .unwrap_or_else(|e: QpError| {
                            log::warn!("subsystem {}: no steady-admissible correction ({e})", i + 1);
                            vec![f64::NAN; cl.ny]
                        });
                out.push(a);
            }
            Some(out)
        }
        None => None,
    };
    Ok(RunOutput {
        trace,
        events: governor.map(|g| g.events().to_vec()).unwrap_or_default(),
        causality_violations: violations,
        alpha_ad,
    })
}
