//! Observed trial data and the per-stratum count statistics.
//!
//! Stratum labels are arbitrary strings at the boundary. A [`TrialDataset`]
//! stores them once, sorted lexicographically, and every unit refers to its
//! stratum by position in that list. Because the label set is derived from
//! the units themselves, no stratum is ever empty.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::randomize::Mechanism;

/// One participant: outcome, treatment decision, assignment and stratum id.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitRecord {
    pub y: f64,
    pub d: bool,
    pub a: bool,
    /// Index into [`TrialDataset::strata`].
    pub s: usize,
}

/// Optional second label column, used to describe a finer stratification of
/// the same units.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxLabels {
    pub labels: Vec<String>,
    pub ids: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialDataset {
    units: Vec<UnitRecord>,
    strata: Vec<String>,
    aux: Option<AuxLabels>,
    mechanism: Option<Mechanism>,
}

fn intern<S: AsRef<str>>(labels: &[S]) -> (Vec<String>, Vec<usize>) {
    let mut sorted: Vec<String> = labels.iter().map(|l| l.as_ref().to_string()).collect();
    sorted.sort();
    sorted.dedup();
    let ids = labels
        .iter()
        .map(|l| sorted.binary_search_by(|x| x.as_str().cmp(l.as_ref())).unwrap())
        .collect();
    (sorted, ids)
}

fn flag(v: u8, index: usize, what: &'static str) -> Result<bool> {
    match v {
        0 => Ok(false),
        1 => Ok(true),
        _ => Err(Error::InvalidUnit { index, reason: what }),
    }
}

impl TrialDataset {
    /// Builds a dataset from parallel columns, validating every row.
    pub fn from_columns<S: AsRef<str>>(y: &[f64], d: &[u8], a: &[u8], strata: &[S]) -> Result<Self> {
        let n = y.len();
        if d.len() != n || a.len() != n || strata.len() != n {
            return Err(Error::InvalidArgument("column lengths differ".to_string()));
        }
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        let (labels, ids) = intern(strata);
        let mut units = Vec::with_capacity(n);
        for i in 0..n {
            if !y[i].is_finite() {
                return Err(Error::InvalidUnit { index: i, reason: "outcome is not finite" });
            }
            units.push(UnitRecord {
                y: y[i],
                d: flag(d[i], i, "decision must be 0 or 1")?,
                a: flag(a[i], i, "assignment must be 0 or 1")?,
                s: ids[i],
            });
        }
        Ok(Self { units, strata: labels, aux: None, mechanism: None })
    }

    /// Builds a dataset from units whose stratum ids index `strata`.
    ///
    /// `strata` must be sorted, duplicate-free and fully used by the units.
    pub fn from_units(units: Vec<UnitRecord>, strata: Vec<String>) -> Result<Self> {
        if units.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if strata.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("stratum labels must be sorted and unique".to_string()));
        }
        let mut used = alloc::vec![false; strata.len()];
        for (i, u) in units.iter().enumerate() {
            if !u.y.is_finite() {
                return Err(Error::InvalidUnit { index: i, reason: "outcome is not finite" });
            }
            match used.get_mut(u.s) {
                Some(slot) => *slot = true,
                None => return Err(Error::InvalidUnit { index: i, reason: "stratum id out of range" }),
            }
        }
        if used.iter().any(|u| !u) {
            return Err(Error::InvalidArgument("every stratum label must have at least one unit".to_string()));
        }
        Ok(Self { units, strata, aux: None, mechanism: None })
    }

    /// Attaches an auxiliary label per unit (for example a finer stratum).
    pub fn with_aux<S: AsRef<str>>(mut self, labels: &[S]) -> Result<Self> {
        if labels.len() != self.units.len() {
            return Err(Error::InvalidArgument("auxiliary column length differs".to_string()));
        }
        let (labels, ids) = intern(labels);
        self.aux = Some(AuxLabels { labels, ids });
        Ok(self)
    }

    /// Records which mechanism produced the assignments.
    pub fn with_mechanism(mut self, mechanism: Mechanism) -> Self {
        self.mechanism = Some(mechanism);
        self
    }

    pub fn units(&self) -> &[UnitRecord] {
        &self.units
    }

    pub fn strata(&self) -> &[String] {
        &self.strata
    }

    pub fn aux(&self) -> Option<&AuxLabels> {
        self.aux.as_ref()
    }

    pub fn mechanism(&self) -> Option<Mechanism> {
        self.mechanism
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn num_strata(&self) -> usize {
        self.strata.len()
    }

    pub fn stratum_label(&self, s: usize) -> &str {
        &self.strata[s]
    }

    /// Replaces every stratum label by its image under `mapping`.
    ///
    /// Outcomes, decisions, assignments and auxiliary labels are untouched.
    pub fn relabel_strata<F, S>(&self, mut mapping: F) -> Result<Self>
    where
        F: FnMut(&str) -> Option<S>,
        S: AsRef<str>,
    {
        let mut images = Vec::with_capacity(self.strata.len());
        for label in &self.strata {
            match mapping(label) {
                Some(img) => images.push(img.as_ref().to_string()),
                None => return Err(Error::UnmappedStratum(label.clone())),
            }
        }
        let (labels, remap) = intern(&images);
        let units = self
            .units
            .iter()
            .map(|u| UnitRecord { s: remap[u.s], ..*u })
            .collect();
        Ok(Self { units, strata: labels, aux: self.aux.clone(), mechanism: self.mechanism })
    }

    /// [`relabel_strata`](Self::relabel_strata) driven by an explicit table.
    pub fn relabel_with(&self, table: &BTreeMap<String, String>) -> Result<Self> {
        self.relabel_strata(|s| table.get(s))
    }

    /// Re-stratifies the units by their auxiliary labels.
    ///
    /// The auxiliary partition must be nested in the current one: every
    /// auxiliary label occurs within a single stratum.
    pub fn refine_by_aux(&self) -> Result<Self> {
        let aux = self.aux.as_ref().ok_or(Error::MissingAuxiliary)?;
        let mut parent: Vec<Option<usize>> = alloc::vec![None; aux.labels.len()];
        for (u, &fine) in self.units.iter().zip(&aux.ids) {
            match parent[fine] {
                None => parent[fine] = Some(u.s),
                Some(p) if p != u.s => return Err(Error::NotARefinement(aux.labels[fine].clone())),
                Some(_) => {}
            }
        }
        let units = self
            .units
            .iter()
            .zip(&aux.ids)
            .map(|(u, &fine)| UnitRecord { s: fine, ..*u })
            .collect();
        Ok(Self { units, strata: aux.labels.clone(), aux: None, mechanism: self.mechanism })
    }
}

/// Counts n(s), n_A(s), n_D(s), n_AD(s) for a single stratum.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CellCounts {
    pub n: u64,
    pub n_a: u64,
    pub n_d: u64,
    pub n_ad: u64,
}

impl CellCounts {
    /// Units with A = 0.
    pub fn n_control(&self) -> u64 {
        self.n - self.n_a
    }

    /// Units with D = 1 among A = 0.
    pub fn n_d_control(&self) -> u64 {
        self.n_d - self.n_ad
    }

    /// Share of treated units deciding treatment, n_AD(s)/n_A(s).
    pub fn take_up_treated(&self) -> f64 {
        self.n_ad as f64 / self.n_a as f64
    }

    /// Share of control units deciding treatment, (n_D(s)-n_AD(s))/(n(s)-n_A(s)).
    pub fn take_up_control(&self) -> f64 {
        self.n_d_control() as f64 / self.n_control() as f64
    }

    /// Estimated first stage of the stratum.
    pub fn first_stage(&self) -> f64 {
        self.take_up_treated() - self.take_up_control()
    }

    pub fn assigned_share(&self) -> f64 {
        self.n_a as f64 / self.n as f64
    }

    /// Sign of n(s) n_AD(s) - n_A(s) n_D(s), evaluated in integers. This
    /// equals n_A(s) (n(s) - n_A(s)) times the first stage.
    pub fn rank_sign(&self) -> core::cmp::Ordering {
        let lhs = self.n as u128 * self.n_ad as u128;
        let rhs = self.n_a as u128 * self.n_d as u128;
        lhs.cmp(&rhs)
    }

    fn merge(&mut self, other: &CellCounts) {
        self.n += other.n;
        self.n_a += other.n_a;
        self.n_d += other.n_d;
        self.n_ad += other.n_ad;
    }
}

/// The sufficient count statistics of a trial.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StratumCounts {
    pub per_stratum: Vec<CellCounts>,
    pub total: CellCounts,
}

impl StratumCounts {
    pub fn num_strata(&self) -> usize {
        self.per_stratum.len()
    }

    pub fn n(&self) -> u64 {
        self.total.n
    }

    /// n(s)/n.
    pub fn share(&self, s: usize) -> f64 {
        self.per_stratum[s].n as f64 / self.total.n as f64
    }
}

/// Tallies the count statistics of `dataset`.
pub fn count(dataset: &TrialDataset) -> StratumCounts {
    let mut per_stratum = alloc::vec![CellCounts::default(); dataset.num_strata()];
    for u in dataset.units() {
        let c = &mut per_stratum[u.s];
        c.n += 1;
        c.n_a += u.a as u64;
        c.n_d += u.d as u64;
        c.n_ad += (u.a && u.d) as u64;
    }
    let mut total = CellCounts::default();
    for c in &per_stratum {
        total.merge(c);
    }
    StratumCounts { per_stratum, total }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn four_units() -> TrialDataset {
        TrialDataset::from_columns(&[1.0, 1.0, 0.0, 0.0], &[1, 1, 0, 0], &[1, 1, 0, 0], &["x", "x", "x", "x"]).unwrap()
    }

    #[test]
    fn counts_perfect_compliance() {
        let c = count(&four_units());
        assert_eq!(c.total, CellCounts { n: 4, n_a: 2, n_d: 2, n_ad: 2 });
        assert_eq!(c.per_stratum.len(), 1);
    }

    #[test]
    fn rejects_bad_rows() {
        let err = TrialDataset::from_columns(&[1.0, 2.0], &[1, 0], &[1, 2], &["a", "a"]).unwrap_err();
        assert_eq!(err, Error::InvalidUnit { index: 1, reason: "assignment must be 0 or 1" });
        let err = TrialDataset::from_columns(&[f64::NAN], &[1], &[1], &["a"]).unwrap_err();
        assert!(matches!(err, Error::InvalidUnit { index: 0, .. }));
        let empty: [&str; 0] = [];
        assert_eq!(TrialDataset::from_columns(&[], &[], &[], &empty).unwrap_err(), Error::EmptyDataset);
    }

    #[test]
    fn labels_sorted_lexicographically() {
        let ds = TrialDataset::from_columns(&[0.0; 3], &[0; 3], &[0, 1, 0], &["b", "a", "10"]).unwrap();
        assert_eq!(ds.strata(), &["10".to_string(), "a".to_string(), "b".to_string()]);
        assert_eq!(ds.units()[0].s, 2);
    }

    #[test]
    fn identity_relabel_is_noop() {
        let ds = four_units();
        assert_eq!(ds.relabel_strata(|l: &str| Some(l.to_string())).unwrap(), ds);
    }

    #[test]
    fn merge_relabel_is_additive() {
        let ds = TrialDataset::from_columns(
            &[0.0; 6],
            &[1, 0, 1, 0, 1, 1],
            &[1, 0, 0, 1, 1, 0],
            &["1", "1", "2", "2", "3", "3"],
        )
        .unwrap();
        let before = count(&ds);
        let mut table = BTreeMap::new();
        table.insert("1".to_string(), "A".to_string());
        table.insert("2".to_string(), "A".to_string());
        table.insert("3".to_string(), "B".to_string());
        let merged = ds.relabel_with(&table).unwrap();
        let after = count(&merged);
        assert_eq!(merged.strata(), &["A".to_string(), "B".to_string()]);
        assert_eq!(after.per_stratum[0].n, before.per_stratum[0].n + before.per_stratum[1].n);
        assert_eq!(after.total, before.total);
    }

    #[test]
    fn unmapped_label_errors() {
        let ds = four_units();
        let table = BTreeMap::new();
        assert_eq!(ds.relabel_with(&table).unwrap_err(), Error::UnmappedStratum("x".to_string()));
    }

    #[test]
    fn refine_requires_nesting() {
        let ds = TrialDataset::from_columns(&[0.0; 4], &[0; 4], &[0, 1, 0, 1], &["a", "a", "b", "b"])
            .unwrap()
            .with_aux(&["a1", "a2", "b1", "b1"])
            .unwrap();
        let fine = ds.refine_by_aux().unwrap();
        assert_eq!(fine.num_strata(), 3);
        let bad = ds.with_aux(&["z", "z", "z", "w"]).unwrap();
        assert_eq!(bad.refine_by_aux().unwrap_err(), Error::NotARefinement("z".to_string()));
        assert_eq!(four_units().refine_by_aux().unwrap_err(), Error::MissingAuxiliary);
    }

    #[test]
    fn from_units_checks_ids() {
        let u = UnitRecord { y: 0.0, d: false, a: false, s: 1 };
        assert!(TrialDataset::from_units(vec![u], vec!["a".to_string()]).is_err());
        assert!(TrialDataset::from_units(vec![u], vec!["a".to_string(), "b".to_string()]).is_err());
    }
}
