//! Model, scenario and run files.
//!
//! All three are TOML with a top-level `schema_version = 1`. Subsystem and
//! coupling indices in files are 1-based. A set is written either as
//! `{ box = [r1, r2, ..] }` for the symmetric box `|v_k| ≤ r_k` or as
//! `{ normals = [[..], ..], offsets = [..] }`.
//!
//! ```toml
//! schema_version = 1
//! name = "two-tanks"
//!
//! [design]
//! horizon = 3
//!
//! [[subsystem]]
//! a = [[0.5, 0.0], [0.1, 0.6]]
//! b = [[0.0], [1.0]]
//! c = [[0.0, 1.0]]
//! e = [[1.0, 0.0], [0.0, 1.0]]
//! x = { box = [1.0, 5.0] }
//! u = { box = [3.0] }
//! w = { box = [0.05, 0.5] }
//!
//! [[coupling]]
//! from = 1
//! to = 2
//! a = [[0.2, 0.0], [0.0, 0.2]]
//! ```

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Polytope;
use crate::model::{CascadeModel, Coupling, DesignParams, OpenLoopSubsystem};
use crate::rhop::SigmaInput;
use crate::sim::{DisturbanceKind, GovernorChoice, ReferenceSchedule, Scenario, DEFAULT_SEED};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    /// toml errors carry the line and column
    #[error("{path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("{path}: {msg}")]
    Invalid { path: String, msg: String },
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn parse<D: serde::de::DeserializeOwned>(text: &str, path: &str) -> Result<D, ConfigError> {
    toml::from_str(text).map_err(|e| ConfigError::Parse {
        path: path.to_string(),
        msg: e.to_string(),
    })
}

fn check_version(v: u32, path: &str) -> Result<(), ConfigError> {
    if v != SCHEMA_VERSION {
        return Err(ConfigError::Invalid {
            path: path.to_string(),
            msg: format!("schema_version {v} is not supported (expected {SCHEMA_VERSION})"),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetSpec {
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normals: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offsets: Option<Vec<f64>>,
}

impl SetSpec {
    pub fn symmetric(r: Vec<f64>) -> Self {
        Self {
            radius: Some(r),
            normals: None,
            offsets: None,
        }
    }

    fn build(&self, dim: usize) -> Result<Polytope<f64>, String> {
        match (&self.radius, &self.normals, &self.offsets) {
            (Some(r), None, None) => {
                if r.len() != dim {
                    return Err(format!("box has {} entries, expected {dim}", r.len()));
                }
                Polytope::symmetric_box(&DVector::from_vec(r.clone())).map_err(|e| e.to_string())
            }
            (None, Some(n), Some(o)) => {
                let f = matrix(n, "normals")?;
                if f.ncols() != dim || f.nrows() != o.len() {
                    return Err(format!(
                        "normals are {}x{} with {} offsets, expected {dim} columns",
                        f.nrows(),
                        f.ncols(),
                        o.len()
                    ));
                }
                Polytope::new(f, DVector::from_vec(o.clone())).map_err(|e| e.to_string())
            }
            _ => Err("a set needs either `box` or both `normals` and `offsets`".into()),
        }
    }
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, String> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(format!("{what} has rows of different lengths"));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsystemFile {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    pub e: Vec<Vec<f64>>,
    pub x: SetSpec,
    pub u: SetSpec,
    pub w: SetSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingFile {
    pub from: usize,
    pub to: usize,
    pub a: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DesignFile {
    pub horizon: usize,
    pub eps: f64,
    pub eps_rpi: f64,
    pub rhop_q: f64,
    pub rhop_r_alpha: f64,
    pub lqr_q: f64,
    pub lqr_r: f64,
}

impl Default for DesignFile {
    fn default() -> Self {
        let d = DesignParams::default();
        Self {
            horizon: d.horizon,
            eps: d.eps,
            eps_rpi: d.eps_rpi,
            rhop_q: d.rhop_q,
            rhop_r_alpha: d.rhop_r_alpha,
            lqr_q: d.lqr_q,
            lqr_r: d.lqr_r,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub schema_version: u32,
    pub name: String,
    #[serde(default)]
    pub design: DesignFile,
    #[serde(rename = "subsystem")]
    pub subsystems: Vec<SubsystemFile>,
    #[serde(rename = "coupling", default)]
    pub couplings: Vec<CouplingFile>,
}

impl ModelFile {
    pub fn from_model(m: &CascadeModel<f64>) -> Self {
        let set = |p: &Polytope<f64>| SetSpec {
            radius: None,
            normals: Some(rows_of(p.normals())),
            offsets: Some(p.offsets().iter().copied().collect()),
        };
        let d = &m.design;
        Self {
            schema_version: SCHEMA_VERSION,
            name: m.name.clone(),
            design: DesignFile {
                horizon: d.horizon,
                eps: d.eps,
                eps_rpi: d.eps_rpi,
                rhop_q: d.rhop_q,
                rhop_r_alpha: d.rhop_r_alpha,
                lqr_q: d.lqr_q,
                lqr_r: d.lqr_r,
            },
            subsystems: m
                .subsystems
                .iter()
                .map(|s| SubsystemFile {
                    a: rows_of(&s.a),
                    b: rows_of(&s.b),
                    c: rows_of(&s.c),
                    e: rows_of(&s.e),
                    x: set(&s.x_set),
                    u: set(&s.u_set),
                    w: set(&s.w_set),
                })
                .collect(),
            couplings: m
                .couplings
                .iter()
                .map(|c| CouplingFile {
                    from: c.from + 1,
                    to: c.to + 1,
                    a: rows_of(&c.a),
                })
                .collect(),
        }
    }

    pub fn to_model(&self, path: &str) -> Result<CascadeModel<f64>, ConfigError> {
        check_version(self.schema_version, path)?;
        let invalid = |msg: String| ConfigError::Invalid {
            path: path.to_string(),
            msg,
        };
        if self.design.horizon == 0 {
            return Err(invalid("design.horizon must be at least 1".into()));
        }
        let mut subsystems = Vec::with_capacity(self.subsystems.len());
        for (i, s) in self.subsystems.iter().enumerate() {
            let ctx = |m: String| invalid(format!("subsystem {}: {m}", i + 1));
            let a = matrix(&s.a, "a").map_err(ctx)?;
            let b = matrix(&s.b, "b").map_err(ctx)?;
            let c = matrix(&s.c, "c").map_err(ctx)?;
            let e = matrix(&s.e, "e").map_err(ctx)?;
            let nx = a.nrows();
            if a.ncols() != nx || b.nrows() != nx || c.ncols() != nx || e.nrows() != nx {
                return Err(ctx("a, b, c and e have inconsistent shapes".into()));
            }
            subsystems.push(OpenLoopSubsystem {
                x_set: s.x.build(nx).map_err(|m| ctx(format!("x: {m}")))?,
                u_set: s.u.build(b.ncols()).map_err(|m| ctx(format!("u: {m}")))?,
                w_set: s.w.build(e.ncols()).map_err(|m| ctx(format!("w: {m}")))?,
                a,
                b,
                c,
                e,
            });
        }
        let mut couplings = Vec::with_capacity(self.couplings.len());
        for (n, c) in self.couplings.iter().enumerate() {
            let ctx = |m: String| invalid(format!("coupling {}: {m}", n + 1));
            let m = self.subsystems.len();
            if c.from == 0 || c.to == 0 || c.from > m || c.to > m {
                return Err(ctx(format!("indices must lie in 1..={m}")));
            }
            let a = matrix(&c.a, "a").map_err(ctx)?;
            let (nto, nfrom) = (subsystems[c.to - 1].nx(), subsystems[c.from - 1].nx());
            if a.shape() != (nto, nfrom) {
                return Err(ctx(format!("a is {:?}, expected ({nto}, {nfrom})", a.shape())));
            }
            couplings.push(Coupling {
                from: c.from - 1,
                to: c.to - 1,
                a,
            });
        }
        let d = &self.design;
        Ok(CascadeModel {
            name: self.name.clone(),
            subsystems,
            couplings,
            design: DesignParams {
                horizon: d.horizon,
                eps: d.eps,
                eps_rpi: d.eps_rpi,
                rhop_q: d.rhop_q,
                rhop_r_alpha: d.rhop_r_alpha,
                lqr_q: d.lqr_q,
                lqr_r: d.lqr_r,
            },
        })
    }
}

pub fn parse_model(text: &str, path: &str) -> Result<CascadeModel<f64>, ConfigError> {
    parse::<ModelFile>(text, path)?.to_model(path)
}

pub fn load_model(path: &Path) -> Result<CascadeModel<f64>, ConfigError> {
    parse_model(&read(path)?, &path.display().to_string())
}

pub fn model_to_toml(m: &CascadeModel<f64>) -> String {
    toml::to_string(&ModelFile::from_model(m)).expect("model serializes")
}

fn default_steps() -> usize {
    crate::sim::scenario::DEFAULT_STEPS
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

fn default_horizon() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema_version: u32,
    pub name: String,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub governor: GovernorChoice,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub disturbance: DisturbanceKind,
    #[serde(default)]
    pub sigma_input: SigmaInput,
    /// one schedule per subsystem, in index order
    #[serde(rename = "reference")]
    pub references: Vec<ReferenceSchedule>,
}

impl ScenarioFile {
    pub fn from_scenario(s: &Scenario) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            name: s.name.clone(),
            steps: s.steps,
            governor: s.governor,
            horizon: s.horizon,
            seed: s.seed,
            disturbance: s.disturbance,
            sigma_input: s.sigma_input,
            references: s.references.clone(),
        }
    }

    pub fn to_scenario(&self, path: &str) -> Result<Scenario, ConfigError> {
        check_version(self.schema_version, path)?;
        if self.horizon == 0 {
            return Err(ConfigError::Invalid {
                path: path.to_string(),
                msg: "horizon must be at least 1".into(),
            });
        }
        Ok(Scenario {
            name: self.name.clone(),
            steps: self.steps,
            references: self.references.clone(),
            disturbance: self.disturbance,
            seed: self.seed,
            governor: self.governor,
            horizon: self.horizon,
            sigma_input: self.sigma_input,
        })
    }
}

pub fn parse_scenario(text: &str, path: &str) -> Result<Scenario, ConfigError> {
    parse::<ScenarioFile>(text, path)?.to_scenario(path)
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ConfigError> {
    parse_scenario(&read(path)?, &path.display().to_string())
}

pub fn scenario_to_toml(s: &Scenario) -> String {
    toml::to_string(&ScenarioFile::from_scenario(s)).expect("scenario serializes")
}

/// Synthesis tolerances a run may override.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    pub eps: Option<f64>,
    pub eps_rpi: Option<f64>,
}

/// Everything one `run` needs. Relative paths are resolved against the
/// directory of the run file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub model: PathBuf,
    pub scenario: PathBuf,
    #[serde(default)]
    pub governor: Option<GovernorChoice>,
    #[serde(default)]
    pub horizon: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let p = path.display().to_string();
        let mut cfg: RunConfig = parse(&read(path)?, &p)?;
        check_version(cfg.schema_version, &p)?;
        if cfg.horizon == Some(0) {
            return Err(ConfigError::Invalid {
                path: p,
                msg: "horizon must be at least 1".into(),
            });
        }
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |q: &Path| if q.is_absolute() { q.to_path_buf() } else { base.join(q) };
        cfg.model = resolve(&cfg.model);
        cfg.scenario = resolve(&cfg.scenario);
        cfg.out_dir = cfg.out_dir.as_deref().map(resolve);
        Ok(cfg)
    }

    /// Loads the model and scenario with the overrides applied.
    pub fn resolve(&self) -> Result<(CascadeModel<f64>, Scenario), ConfigError> {
        let mut model = load_model(&self.model)?;
        let mut scenario = load_scenario(&self.scenario)?;
        if let Some(g) = self.governor {
            scenario.governor = g;
        }
        if let Some(n) = self.horizon {
            scenario.horizon = n;
            model.design.horizon = n;
        }
        if let Some(s) = self.seed {
            scenario.seed = s;
        }
        if let Some(e) = self.tolerances.eps {
            model.design.eps = e;
        }
        if let Some(e) = self.tolerances.eps_rpi {
            model.design.eps_rpi = e;
        }
        Ok((model, scenario))
    }
}
