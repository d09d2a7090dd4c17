//! CSV trial files, per-stratum τ files and model specification files.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use car_late_core::dgp::{DgpSpec, StratumSpec};
use car_late_core::TrialDataset;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

fn open(path: &Path) -> CliResult<File> {
    File::open(path).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}

fn column(headers: &csv::StringRecord, name: &str, path: &Path) -> CliResult<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| CliError::validation(format!("{}: missing column {name:?}", path.display())))
}

fn binary(field: &str, name: &str, row: u64) -> CliResult<u8> {
    match field.trim() {
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(CliError::validation(format!("row {row}: column {name} must be 0 or 1, got {other:?}"))),
    }
}

/// Reads a trial from CSV with columns `y`, `d`, `a`, `s`. When `fine` names
/// a column its labels become the dataset's auxiliary strata.
pub fn read_trial_from<R: Read>(reader: R, path: &Path, fine: Option<&str>) -> CliResult<TrialDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let [iy, id, ia, is] = ["y", "d", "a", "s"].map(|c| column(&headers, c, path));
    let (iy, id, ia, is) = (iy?, id?, ia?, is?);
    let ifine = fine.map(|c| column(&headers, c, path)).transpose()?;

    let (mut y, mut d, mut a, mut s, mut aux) = (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (i, rec) in rdr.records().enumerate() {
        let row = i as u64 + 1;
        let rec = rec.map_err(|e| CliError::validation(format!("row {row}: {e}")))?;
        let get = |j: usize, name: &str| {
            rec.get(j).ok_or_else(|| CliError::validation(format!("row {row}: missing field {name}")))
        };
        let yv = get(iy, "y")?.trim();
        let yv: f64 = yv
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| CliError::validation(format!("row {row}: column y is not a finite number: {yv:?}")))?;
        y.push(yv);
        d.push(binary(get(id, "d")?, "d", row)?);
        a.push(binary(get(ia, "a")?, "a", row)?);
        let label = get(is, "s")?.trim();
        if label.is_empty() {
            return Err(CliError::validation(format!("row {row}: empty stratum label")));
        }
        s.push(label.to_string());
        if let Some(j) = ifine {
            aux.push(get(j, fine.unwrap())?.trim().to_string());
        }
    }
    if y.is_empty() {
        return Err(CliError::validation(format!("{}: no data rows", path.display())));
    }
    let data = TrialDataset::from_columns(&y, &d, &a, &s)?;
    Ok(if ifine.is_some() { data.with_aux(&aux)? } else { data })
}

pub fn read_trial(path: &Path, fine: Option<&str>) -> CliResult<TrialDataset> {
    read_trial_from(open(path)?, path, fine)
}

/// Writes `y,d,a,s` (plus `s_fine` when the dataset has auxiliary labels).
/// Outcomes use the shortest decimal that reads back to the same f64.
pub fn write_trial<W: Write>(data: &TrialDataset, out: W) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(out);
    let aux = data.aux();
    if aux.is_some() {
        w.write_record(["y", "d", "a", "s", "s_fine"])?;
    } else {
        w.write_record(["y", "d", "a", "s"])?;
    }
    for (i, u) in data.units().iter().enumerate() {
        let y = u.y.to_string();
        let d = if u.d { "1" } else { "0" };
        let a = if u.a { "1" } else { "0" };
        let s = data.stratum_label(u.s);
        match aux {
            Some(x) => w.write_record([y.as_str(), d, a, s, x.labels[x.ids[i]].as_str()])?,
            None => w.write_record([y.as_str(), d, a, s])?,
        }
    }
    w.flush()?;
    Ok(())
}

/// τ per stratum from a CSV with columns `s` and `tau`, in the dataset's
/// stratum order.
pub fn read_tau_file(path: &Path, data: &TrialDataset) -> CliResult<Vec<f64>> {
    let mut rdr = csv::Reader::from_reader(open(path)?);
    let headers = rdr.headers()?.clone();
    let (is, it) = (column(&headers, "s", path)?, column(&headers, "tau", path)?);
    let mut table = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| CliError::validation(format!("{}: row {row}: {e}", path.display())))?;
        let label = rec.get(is).unwrap_or("").trim().to_string();
        let raw = rec.get(it).unwrap_or("").trim();
        let tau: f64 = raw
            .parse()
            .map_err(|_| CliError::validation(format!("{}: row {row}: tau {raw:?} is not a number", path.display())))?;
        table.insert(label, tau);
    }
    data.strata()
        .iter()
        .map(|l| {
            table
                .get(l)
                .copied()
                .ok_or_else(|| CliError::validation(format!("{}: no tau for stratum {l:?}", path.display())))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecStratum {
    pub label: String,
    pub p: f64,
    pub pi_a: f64,
    pub tau: f64,
    pub p_at: f64,
    pub p_nt: f64,
    pub p_c: f64,
    pub m1c: f64,
    pub m0c: f64,
    pub m1at: f64,
    pub m0nt: f64,
    pub v1c: f64,
    pub v0c: f64,
    pub v1at: f64,
    pub v0nt: f64,
}

/// TOML model file: a top-level `constant_pi` and a `[[strata]]` array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecFile {
    pub constant_pi: bool,
    pub strata: Vec<SpecStratum>,
}

impl SpecFile {
    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::validation(format!("spec file: {e}")))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_spec(&self) -> CliResult<DgpSpec> {
        let strata = self
            .strata
            .iter()
            .map(|s| StratumSpec {
                label: s.label.clone(),
                p: s.p,
                pi_a: s.pi_a,
                tau: s.tau,
                p_at: s.p_at,
                p_nt: s.p_nt,
                p_c: s.p_c,
                m1c: s.m1c,
                m0c: s.m0c,
                m1at: s.m1at,
                m0nt: s.m0nt,
                v1c: s.v1c,
                v0c: s.v0c,
                v1at: s.v1at,
                v0nt: s.v0nt,
            })
            .collect();
        Ok(DgpSpec::new(strata, self.constant_pi)?)
    }

    pub fn from_spec(spec: &DgpSpec) -> Self {
        let strata = spec
            .strata()
            .iter()
            .map(|s| SpecStratum {
                label: s.label.clone(),
                p: s.p,
                pi_a: s.pi_a,
                tau: s.tau,
                p_at: s.p_at,
                p_nt: s.p_nt,
                p_c: s.p_c,
                m1c: s.m1c,
                m0c: s.m0c,
                m1at: s.m1at,
                m0nt: s.m0nt,
                v1c: s.v1c,
                v0c: s.v0c,
                v1at: s.v1at,
                v0nt: s.v0nt,
            })
            .collect();
        Self { constant_pi: spec.constant_pi(), strata }
    }
}
