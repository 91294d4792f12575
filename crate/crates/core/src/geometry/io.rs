//! Plain-text polytope blocks.
//!
//! ```text
//! polytope <name>
//! dim <d>
//! halfspaces <m>
//! <f_1> ... <f_d> <g>
//! ...
//! end
//! ```
//!
//! Numbers use Rust's shortest round-trip exponent notation. Blank lines and
//! lines starting with `#` are ignored between blocks.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use super::{GeometryError, Polytope};
use crate::scalar::Real;

pub fn write_polytope<T: Real>(out: &mut String, name: &str, p: &Polytope<T>) {
    let _ = writeln!(out, "polytope {name}");
    let _ = writeln!(out, "dim {}", p.dim());
    let _ = writeln!(out, "halfspaces {}", p.n_halfspaces());
    for i in 0..p.n_halfspaces() {
        let mut line = String::new();
        for k in 0..p.dim() {
            let _ = write!(line, "{:e} ", p.normals()[(i, k)].as_f64());
        }
        let _ = write!(line, "{:e}", p.offsets()[i].as_f64());
        let _ = writeln!(out, "{line}");
    }
    let _ = writeln!(out, "end");
}

fn parse_err(line: usize, msg: impl Into<String>) -> GeometryError {
    GeometryError::Parse { line, msg: msg.into() }
}

fn header<'a>(
    lines: &mut impl Iterator<Item = (usize, &'a str)>,
    key: &str,
) -> Result<(usize, &'a str), GeometryError> {
    let (no, line) = lines
        .next()
        .ok_or_else(|| parse_err(0, format!("unexpected end of input, expected `{key}`")))?;
    let rest = line
        .strip_prefix(key)
        .ok_or_else(|| parse_err(no, format!("expected `{key}`")))?;
    Ok((no, rest.trim()))
}

/// Parses every block in `text`, in order.
pub fn read_polytopes<T: Real>(text: &str) -> Result<Vec<(String, Polytope<T>)>, GeometryError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .peekable();
    let mut out = Vec::new();
    while lines.peek().is_some() {
        let (_, name) = header(&mut lines, "polytope")?;
        let (no, d) = header(&mut lines, "dim")?;
        let d: usize = d.parse().map_err(|_| parse_err(no, "bad dimension"))?;
        let (no, m) = header(&mut lines, "halfspaces")?;
        let m: usize = m.parse().map_err(|_| parse_err(no, "bad half-space count"))?;
        let mut f = DMatrix::zeros(m, d);
        let mut g = DVector::zeros(m);
        for i in 0..m {
            let (no, line) = lines
                .next()
                .ok_or_else(|| parse_err(0, "unexpected end of input inside block"))?;
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| parse_err(no, format!("bad number: {e}")))?;
            if vals.len() != d + 1 {
                return Err(parse_err(
                    no,
                    format!("expected {} numbers, found {}", d + 1, vals.len()),
                ));
            }
            for k in 0..d {
                f[(i, k)] = T::lit(vals[k]);
            }
            g[i] = T::lit(vals[d]);
        }
        let (no, rest) = lines.next().ok_or_else(|| parse_err(0, "missing `end`"))?;
        if rest != "end" {
            return Err(parse_err(no, "expected `end`"));
        }
        let p = Polytope::new(f, g).map_err(|e| parse_err(no, e.to_string()))?;
        out.push((name.to_string(), p));
    }
    Ok(out)
}
