//! Invariant checks over a synthesized cascade and its exported sets.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::geometry::{Polytope, SupportFn};
use crate::model::{check_assumption1, ClosedLoopCascade};
use crate::numerics::Weighting;
use crate::rhop::LYAPUNOV_TOL;
use crate::sets::{extended_model, SetSuite, SuiteFiles};

pub const SET_TOL: f64 = 1e-7;
pub const RANDOM_DIRECTIONS: usize = 200;
const DIRECTION_SEED: u64 = 7;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub subsystem: Option<usize>,
    pub passed: bool,
    /// measured quantity; the check passes when it is at most `tolerance`
    pub residual: f64,
    pub tolerance: f64,
    #[serde(skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub passed: bool,
    pub checks: Vec<Check>,
}

impl Report {
    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn check(name: &str, sub: usize, residual: f64, tolerance: f64, detail: String) -> Check {
    Check {
        name: format!("{name}/{sub}"),
        subsystem: Some(sub),
        // NaN never passes
        passed: residual <= tolerance,
        residual,
        tolerance,
        detail,
    }
}

fn failed(name: &str, sub: usize, detail: String) -> Check {
    check(name, sub, f64::INFINITY, 0.0, detail)
}

fn random_directions(n: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<DVector<f64>> {
    (0..count)
        .map(|_| {
            let d = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let norm = d.norm();
            if norm > 0.0 {
                d / norm
            } else {
                DVector::from_element(n, 1.0)
            }
        })
        .collect()
}

/// `max_r (h_O(𝒜ᵀf_r) + h_W(f_r[..nz]) − g_r) / ‖f_r‖` for `O` under
/// `ξ⁺ = 𝒜ξ + [I; 0]w`, `w ∈ W`.
pub fn moas_invariance_residual(o: &Polytope<f64>, a: &DMatrix<f64>, w_z: &Polytope<f64>) -> Result<f64, String> {
    let nz = w_z.dim();
    let mut worst = f64::NEG_INFINITY;
    for r in 0..o.n_halfspaces() {
        let f = o.normals().row(r).transpose();
        let h = o.support(&(a.transpose() * &f)).map_err(|e| e.to_string())?;
        let hw = w_z.support(&f.rows(0, nz).into_owned()).map_err(|e| e.to_string())?;
        worst = worst.max((h + hw - o.offsets()[r]) / f.norm().max(1e-300));
    }
    Ok(worst)
}

/// Runs every check. `fresh` is synthesized from the model in memory;
/// `files` is the exported suite under examination.
pub fn verify(cascade: &ClosedLoopCascade<f64>, fresh: &SetSuite<f64>, files: &SuiteFiles<f64>) -> Report {
    let mut checks = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(DIRECTION_SEED);
    for (sub, name) in &files.mismatched {
        checks.push(failed(
            "checksum",
            *sub,
            format!("set `{name}` does not match the manifest"),
        ));
    }
    for (i, cl) in cascade.subsystems.iter().enumerate() {
        let sub = i + 1;
        let a1 = check_assumption1(cl);
        checks.push(check(
            "schur",
            sub,
            a1.spectral_radius,
            1.0 - 1e-12,
            "spectral radius of the closed loop".into(),
        ));
        checks.push(check(
            "steady_gain",
            sub,
            a1.dc_gain_residual,
            1e-8,
            "output equals reference at steady state".into(),
        ));

        let d = &cascade.design;
        let q = DMatrix::identity(cl.nz(), cl.nz()) * d.rhop_q;
        let r = DMatrix::identity(cl.ny, cl.ny) * d.rhop_r_alpha;
        match Weighting::terminal(&cl.phi, &cl.gamma, q, r) {
            Ok(w) => {
                checks.push(check(
                    "lyapunov",
                    sub,
                    w.lyapunov_residual(&cl.phi),
                    LYAPUNOV_TOL,
                    String::new(),
                ));
                let margin = w.alpha_margin(&cl.gamma).unwrap_or(f64::NAN);
                checks.push(check(
                    "alpha_weight_margin",
                    sub,
                    -margin,
                    0.0,
                    "minus the smallest eigenvalue of P_α − ΓᵀPΓ − R_α".into(),
                ));
            }
            Err(e) => checks.push(failed("lyapunov", sub, e.to_string())),
        }

        // mRPI invariance of the synthesized outer bound, Φ F ⊕ W_e ⊆ F
        let s = &fresh.subsystems[i];
        let mut dirs: Vec<DVector<f64>> = (0..s.f_inf.template.n_halfspaces())
            .map(|r| s.f_inf.template.normals().row(r).transpose())
            .collect();
        dirs.extend(random_directions(cl.nz(), RANDOM_DIRECTIONS, &mut rng));
        let mut worst = f64::NEG_INFINITY;
        let mut err = None;
        for eta in &dirs {
            let lhs = s
                .f_inf
                .set
                .support(&(cl.phi.transpose() * eta))
                .and_then(|a| s.we_steady.support(eta).map(|b| a + b));
            match (lhs, s.f_inf.set.support(eta)) {
                (Ok(l), Ok(r)) => worst = worst.max(l - r),
                (Err(e), _) | (_, Err(e)) => err = Some(e.to_string()),
            }
        }
        checks.push(match err {
            Some(e) => failed("mrpi_invariance", sub, e),
            None => check(
                "mrpi_invariance",
                sub,
                worst,
                SET_TOL,
                format!("{} directions", dirs.len()),
            ),
        });

        let get = |name: &str| files.get(sub, name);
        let (Some(f_outer), Some(xu_inf), Some(o_eps), Some(w_z)) =
            (get("f_inf_outer"), get("xu_inf"), get("o_eps"), get("w_z"))
        else {
            checks.push(failed("files", sub, "exported sets are incomplete".into()));
            continue;
        };

        // exported outer bound contains F
        let mut worst = f64::NEG_INFINITY;
        for r in 0..f_outer.n_halfspaces() {
            let n = f_outer.normals().row(r).transpose();
            worst = worst.max(s.f_inf.set.support(&n).unwrap_or(f64::INFINITY) - f_outer.offsets()[r]);
        }
        checks.push(check("mrpi_outer_bound", sub, worst, SET_TOL, String::new()));

        // nesting XU(k+1) ⊆ XU(k) and XU_∞ ⊆ XU(k)
        let mut xu_seq = Vec::new();
        while let Some(p) = get(&format!("xu_{}", xu_seq.len())) {
            xu_seq.push(p);
        }
        let mut worst = f64::NEG_INFINITY;
        let mut detail = format!("{} transient sets", xu_seq.len());
        for k in 0..xu_seq.len() {
            let inner = if k + 1 < xu_seq.len() {
                vec![xu_seq[k + 1], xu_inf]
            } else {
                vec![xu_inf]
            };
            for p in inner {
                for r in 0..xu_seq[k].n_halfspaces() {
                    let n = xu_seq[k].normals().row(r).transpose();
                    match p.support(&n) {
                        Ok(h) => worst = worst.max(h - xu_seq[k].offsets()[r]),
                        Err(e) => detail = e.to_string(),
                    }
                }
            }
        }
        checks.push(check("tightening_nesting", sub, worst, SET_TOL, detail));

        // O_ε is invariant and admissible
        let (a, c) = extended_model(cl);
        checks.push(match moas_invariance_residual(o_eps, &a, w_z) {
            Ok(r) => check("moas_invariance", sub, r, SET_TOL, String::new()),
            Err(e) => failed("moas_invariance", sub, e),
        });
        let mut worst = f64::NEG_INFINITY;
        for r in 0..xu_inf.n_halfspaces() {
            let n = xu_inf.normals().row(r).transpose();
            let h = o_eps.support(&(c.transpose() * &n)).unwrap_or(f64::INFINITY);
            worst = worst.max(h - xu_inf.offsets()[r]);
        }
        checks.push(check("moas_admissible", sub, worst, SET_TOL, String::new()));
        checks.push(check(
            "moas_nonempty",
            sub,
            if o_eps.is_empty() { 1.0 } else { 0.0 },
            0.0,
            String::new(),
        ));
    }
    Report {
        passed: checks.iter().all(|c| c.passed),
        checks,
    }
}
