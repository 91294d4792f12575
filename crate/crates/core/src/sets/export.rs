//! Set-suite files: one text file per subsystem plus a JSON manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{SetSuite, SetsError};
use crate::geometry::io::{read_polytopes, write_polytope};
use crate::geometry::Polytope;
use crate::scalar::Real;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub subsystem: usize,
    pub name: String,
    pub file: String,
    pub dim: usize,
    pub facets: usize,
    pub sha256: String,
}

/// Synthesis figures recorded next to the sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub subsystem: usize,
    /// number of transient sets `XU(0..=k)`
    pub transient_sets: usize,
    /// power `s` with `Φ^s T ⊆ αT`
    pub mrpi_power: usize,
    pub mrpi_alpha: f64,
    /// length of the tightening sequence inside the MOAS computation
    pub moas_tightening_steps: usize,
    pub moas_determined_at: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub entries: Vec<ManifestEntry>,
    #[serde(default)]
    pub diagnostics: Vec<Diagnostics>,
}

fn block_digest<T: Real>(name: &str, p: &Polytope<T>) -> String {
    let mut s = String::new();
    write_polytope(&mut s, name, p);
    let digest = Sha256::digest(s.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn subsystem_file(i: usize) -> String {
    format!("subsystem_{i}.sets")
}

/// Named sets of one subsystem in export order.
fn named_sets<T: Real>(suite: &SetSuite<T>, i: usize) -> Result<Vec<(String, Polytope<T>)>, SetsError> {
    let s = &suite.subsystems[i];
    let mut out: Vec<(String, Polytope<T>)> =
        s.xu.iter()
            .enumerate()
            .map(|(k, p)| (format!("xu_{k}"), p.clone()))
            .collect();
    out.push(("xu_inf".into(), s.xu_inf.clone()));
    out.push(("f_inf_outer".into(), s.f_inf.outer_polytope()?));
    out.push(("w_z".into(), s.moas.w_z.clone()));
    out.push(("xu_eps".into(), s.moas.moas.xu_eps.clone()));
    out.push(("o_eps".into(), s.moas.moas.o_eps.clone()));
    out.push(("o_z".into(), s.moas.o_z.clone()));
    Ok(out)
}

/// Writes `subsystem_<i>.sets` files and `manifest.json` into `dir`.
pub fn export_suite<T: Real>(suite: &SetSuite<T>, dir: &Path) -> Result<Manifest, SetsError> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    for i in 0..suite.subsystems.len() {
        let file = subsystem_file(i + 1);
        let mut text = format!("# subsystem {}\n", i + 1);
        for (name, p) in named_sets(suite, i)? {
            write_polytope(&mut text, &name, &p);
            entries.push(ManifestEntry {
                subsystem: i + 1,
                sha256: block_digest(&name, &p),
                name,
                file: file.clone(),
                dim: p.dim(),
                facets: p.n_halfspaces(),
            });
        }
        fs::write(dir.join(&file), text)?;
    }
    let diagnostics = suite
        .subsystems
        .iter()
        .enumerate()
        .map(|(i, s)| Diagnostics {
            subsystem: i + 1,
            transient_sets: s.xu.len(),
            mrpi_power: s.f_inf.s,
            mrpi_alpha: s.f_inf.alpha.as_f64(),
            moas_tightening_steps: s.moas.moas.xu_seq.len(),
            moas_determined_at: s.moas.moas.determined_at,
        })
        .collect();
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        entries,
        diagnostics,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| SetsError::Corrupted {
        file: MANIFEST_FILE.into(),
        msg: e.to_string(),
    })?;
    fs::write(dir.join(MANIFEST_FILE), json + "\n")?;
    Ok(manifest)
}

/// Sets read back from an exported directory, keyed by `(subsystem, name)`.
#[derive(Debug, Clone)]
pub struct SuiteFiles<T: Real> {
    pub manifest: Manifest,
    pub sets: BTreeMap<(usize, String), Polytope<T>>,
    /// sets whose checksum does not match, as `(subsystem, name)`
    pub mismatched: Vec<(usize, String)>,
}

impl<T: Real> SuiteFiles<T> {
    pub fn get(&self, subsystem: usize, name: &str) -> Option<&Polytope<T>> {
        self.sets.get(&(subsystem, name.to_string()))
    }
}

/// Loads an exported suite and checks every set against the manifest.
pub fn load_suite<T: Real>(dir: &Path) -> Result<SuiteFiles<T>, SetsError> {
    load(dir, true)
}

/// Like [`load_suite`], but sets failing their checksum are kept and listed
/// in `mismatched` so their contents can still be examined.
pub fn load_suite_lenient<T: Real>(dir: &Path) -> Result<SuiteFiles<T>, SetsError> {
    load(dir, false)
}

fn load<T: Real>(dir: &Path, strict: bool) -> Result<SuiteFiles<T>, SetsError> {
    let corrupted = |file: &str, msg: String| SetsError::Corrupted { file: file.into(), msg };
    let text = fs::read_to_string(dir.join(MANIFEST_FILE)).map_err(|e| corrupted(MANIFEST_FILE, e.to_string()))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| corrupted(MANIFEST_FILE, e.to_string()))?;
    if manifest.version != MANIFEST_VERSION {
        return Err(corrupted(
            MANIFEST_FILE,
            format!("unsupported version {}", manifest.version),
        ));
    }
    let mut parsed: BTreeMap<String, BTreeMap<String, Polytope<f64>>> = BTreeMap::new();
    for e in &manifest.entries {
        if parsed.contains_key(&e.file) {
            continue;
        }
        let body = fs::read_to_string(dir.join(&e.file)).map_err(|err| corrupted(&e.file, err.to_string()))?;
        let sets = read_polytopes::<f64>(&body).map_err(|err| corrupted(&e.file, err.to_string()))?;
        parsed.insert(e.file.clone(), sets.into_iter().collect());
    }
    let mut sets = BTreeMap::new();
    let mut mismatched = Vec::new();
    for e in &manifest.entries {
        let p = parsed[&e.file]
            .get(&e.name)
            .ok_or_else(|| corrupted(&e.file, format!("set `{}` is missing", e.name)))?;
        if p.dim() != e.dim || p.n_halfspaces() != e.facets {
            return Err(corrupted(&e.file, format!("set `{}` has the wrong shape", e.name)));
        }
        if block_digest(&e.name, p) != e.sha256 {
            if strict {
                return Err(corrupted(&e.file, format!("set `{}` fails its checksum", e.name)));
            }
            mismatched.push((e.subsystem, e.name.clone()));
        }
        sets.insert((e.subsystem, e.name.clone()), p.cast::<T>());
    }
    Ok(SuiteFiles {
        manifest,
        sets,
        mismatched,
    })
}
