//! Recorded runs, their CSV form and summary metrics.
//!
//! CSV columns, in order: `k, i, z0.., y0.., u0.., w0.., y_r0.., g_check0..,
//! alpha0.., eps_d, feasible, fallback, margin_min`. Vector widths are the
//! largest over subsystems; missing entries are left empty. `eps_d` is the
//! Euclidean norm of the controlled error, `margin_min` the smallest slack of
//! the original state and input constraints (negative when violated), and
//! the flags are written as `0`/`1`. Numbers use the shortest form that
//! reads back to the same `f64`.

use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::geometry::Polytope;
use nalgebra::DVector;

/// Band around the final applied reference used for the settling step.
pub const SETTLE_TOL: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("{path}: line {line}: {msg}")]
    Format { path: String, line: usize, msg: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub k: usize,
    /// 1-based subsystem index
    pub i: usize,
    pub z: Vec<f64>,
    pub y: Vec<f64>,
    pub u: Vec<f64>,
    pub w: Vec<f64>,
    pub y_r: Vec<f64>,
    pub g_check: Vec<f64>,
    pub alpha: Vec<f64>,
    pub eps_d: f64,
    pub feasible: bool,
    pub fallback: bool,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
}

const GROUPS: [&str; 7] = ["z", "y", "u", "w", "y_r", "g_check", "alpha"];

fn groups(r: &TraceRow) -> [&Vec<f64>; 7] {
    [&r.z, &r.y, &r.u, &r.w, &r.y_r, &r.g_check, &r.alpha]
}

impl Trace {
    pub fn subsystems(&self) -> usize {
        self.rows.iter().map(|r| r.i).max().unwrap_or(0)
    }

    /// Rows of subsystem `i` (1-based) in step order.
    pub fn of(&self, i: usize) -> impl Iterator<Item = &TraceRow> {
        self.rows.iter().filter(move |r| r.i == i)
    }

    fn widths(&self) -> [usize; 7] {
        let mut w = [0; 7];
        for r in &self.rows {
            for (g, v) in groups(r).iter().enumerate() {
                w[g] = w[g].max(v.len());
            }
        }
        w
    }

    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["k".to_string(), "i".to_string()];
        for (g, n) in self.widths().iter().enumerate() {
            for c in 0..*n {
                h.push(format!("{}{c}", GROUPS[g]));
            }
        }
        h.extend(["eps_d", "feasible", "fallback", "margin_min"].map(String::from));
        h
    }

    pub fn to_csv_writer<W: std::io::Write>(&self, w: W) -> Result<(), csv::Error> {
        let widths = self.widths();
        let mut out = csv::Writer::from_writer(w);
        out.write_record(self.header())?;
        for r in &self.rows {
            let mut rec = vec![r.k.to_string(), r.i.to_string()];
            for (g, v) in groups(r).iter().enumerate() {
                for c in 0..widths[g] {
                    rec.push(v.get(c).map(|x| x.to_string()).unwrap_or_default());
                }
            }
            rec.push(r.eps_d.to_string());
            rec.push(u8::from(r.feasible).to_string());
            rec.push(u8::from(r.fallback).to_string());
            rec.push(r.margin.to_string());
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.to_csv_writer(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("ascii")
    }

    pub fn export_csv(&self, path: &Path) -> Result<(), TraceError> {
        let p = path.display().to_string();
        let file = std::fs::File::create(path).map_err(|e| TraceError::Csv {
            path: p.clone(),
            source: e.into(),
        })?;
        self.to_csv_writer(std::io::BufWriter::new(file))
            .map_err(|source| TraceError::Csv { path: p, source })
    }

    pub fn import_csv(path: &Path) -> Result<Self, TraceError> {
        let p = path.display().to_string();
        let rdr = csv::Reader::from_path(path).map_err(|source| TraceError::Csv {
            path: p.clone(),
            source,
        })?;
        Self::from_csv_reader(rdr, &p)
    }

    pub fn from_csv_str(text: &str) -> Result<Self, TraceError> {
        Self::from_csv_reader(csv::Reader::from_reader(text.as_bytes()), "<memory>")
    }

    fn from_csv_reader<R: std::io::Read>(mut rdr: csv::Reader<R>, path: &str) -> Result<Self, TraceError> {
        let fmt = |line: usize, msg: String| TraceError::Format {
            path: path.to_string(),
            line,
            msg,
        };
        let header = rdr
            .headers()
            .map_err(|source| TraceError::Csv {
                path: path.to_string(),
                source,
            })?
            .clone();
        let cols: Vec<&str> = header.iter().collect();
        let mut widths = [0usize; 7];
        for (g, name) in GROUPS.iter().enumerate() {
            widths[g] = cols
                .iter()
                .filter(|c| {
                    c.strip_prefix(name)
                        .is_some_and(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()))
                })
                .count();
        }
        let expected = 2 + widths.iter().sum::<usize>() + 4;
        if cols.len() != expected {
            return Err(fmt(1, format!("expected {expected} columns, found {}", cols.len())));
        }
        let mut rows = Vec::new();
        for (n, rec) in rdr.records().enumerate() {
            let line = n + 2;
            let rec = rec.map_err(|source| TraceError::Csv {
                path: path.to_string(),
                source,
            })?;
            let field = |c: usize| rec.get(c).unwrap_or("");
            let num = |c: usize| -> Result<f64, TraceError> {
                field(c)
                    .parse::<f64>()
                    .map_err(|_| fmt(line, format!("column {} is not a number", cols[c])))
            };
            let int = |c: usize| -> Result<usize, TraceError> {
                field(c)
                    .parse::<usize>()
                    .map_err(|_| fmt(line, format!("column {} is not an integer", cols[c])))
            };
            let mut c = 2;
            let mut vecs: Vec<Vec<f64>> = Vec::with_capacity(7);
            for w in widths {
                let mut v = Vec::new();
                for _ in 0..w {
                    if !field(c).is_empty() {
                        v.push(num(c)?);
                    }
                    c += 1;
                }
                vecs.push(v);
            }
            let flag = |c: usize| -> Result<bool, TraceError> {
                match field(c) {
                    "0" => Ok(false),
                    "1" => Ok(true),
                    _ => Err(fmt(line, format!("column {} is not 0 or 1", cols[c]))),
                }
            };
            let mut it = vecs.into_iter();
            let mut next = || it.next().expect("seven groups");
            rows.push(TraceRow {
                k: int(0)?,
                i: int(1)?,
                z: next(),
                y: next(),
                u: next(),
                w: next(),
                y_r: next(),
                g_check: next(),
                alpha: next(),
                eps_d: num(c)?,
                feasible: flag(c + 1)?,
                fallback: flag(c + 2)?,
                margin: num(c + 3)?,
            });
        }
        Ok(Self { rows })
    }
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubsystemMetrics {
    pub subsystem: usize,
    /// largest constraint violation, zero when none
    pub max_violation: f64,
    /// `Σ_k ‖y − y_r‖₁`
    pub tracking_error: f64,
    /// first step after which `y` stays within the band of the final applied reference
    pub settling_step: Option<usize>,
    pub fallbacks: usize,
    pub infeasible: usize,
    /// `‖α(final) − α_ad‖∞` when an oracle value is supplied
    pub alpha_gap: Option<f64>,
}

/// Per-subsystem summary. `xu[i]` holds the original constraints on
/// `(x, u)`, `nx[i]` the plant order; `alpha_ad` is optional.
pub fn metrics(
    trace: &Trace,
    xu: &[Polytope<f64>],
    nx: &[usize],
    alpha_ad: Option<&[Vec<f64>]>,
) -> Vec<SubsystemMetrics> {
    (1..=trace.subsystems())
        .map(|i| {
            let rows: Vec<&TraceRow> = trace.of(i).collect();
            let mut m = SubsystemMetrics {
                subsystem: i,
                max_violation: 0.0,
                tracking_error: 0.0,
                settling_step: None,
                fallbacks: 0,
                infeasible: 0,
                alpha_gap: None,
            };
            for r in &rows {
                if let (Some(set), Some(&n)) = (xu.get(i - 1), nx.get(i - 1)) {
                    let mut v: Vec<f64> = r.z[..n.min(r.z.len())].to_vec();
                    v.extend(&r.u);
                    if v.len() == set.dim() {
                        m.max_violation = m.max_violation.max(set.max_violation(&DVector::from_vec(v)));
                    }
                }
                m.tracking_error += l1(&r.y, &r.y_r);
                m.fallbacks += usize::from(r.fallback);
                m.infeasible += usize::from(!r.feasible);
            }
            if let Some(last) = rows.last() {
                let target = &last.g_check;
                let mut settle = Some(last.k);
                for r in rows.iter().rev() {
                    if l1(&r.y, target) > SETTLE_TOL {
                        break;
                    }
                    settle = Some(r.k);
                }
                if l1(&last.y, target) > SETTLE_TOL {
                    settle = None;
                }
                m.settling_step = settle;
                if let Some(ad) = alpha_ad.and_then(|a| a.get(i - 1)) {
                    m.alpha_gap = Some(
                        last.alpha
                            .iter()
                            .zip(ad)
                            .map(|(a, b)| (a - b).abs())
                            .fold(0.0, f64::max),
                    );
                }
            }
            m
        })
        .collect()
}
