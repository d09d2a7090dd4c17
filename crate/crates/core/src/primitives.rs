//! Plug-in estimates of the primitive parameters of each stratum: type
//! shares, type-conditional means and variances of the potential outcomes.

use alloc::vec::Vec;

use crate::data::TrialDataset;
use crate::dgp::StratumMoments;
use crate::error::{Error, Result};
use crate::estimate::SatFit;
use crate::sum::CompensatedSum;

/// Estimates for one stratum. Always-taker (never-taker) fields are `None`
/// when no control unit took (no assigned unit refused) treatment.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimitiveStratum {
    pub p_hat: f64,
    pub pi_a_hat: f64,
    pub pi_d1_hat: f64,
    pub pi_d0_hat: f64,
    pub m0nt_hat: Option<f64>,
    pub m1at_hat: Option<f64>,
    pub m0c_hat: f64,
    pub m1c_hat: f64,
    pub v1at_hat: Option<f64>,
    pub v0nt_hat: Option<f64>,
    pub v1c_hat: f64,
    pub v0c_hat: f64,
    /// Some variance estimate came out negative (before any clipping).
    pub negative_variance: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrimitiveEstimates {
    pub strata: Vec<PrimitiveStratum>,
    pub clipped: bool,
}

impl PrimitiveEstimates {
    pub fn any_negative_variance(&self) -> bool {
        self.strata.iter().any(|s| s.negative_variance)
    }

    /// Moments in the shape used by the population formulas; absent
    /// always-taker or never-taker moments enter as 0.
    pub fn moments(&self) -> Vec<StratumMoments> {
        self.strata
            .iter()
            .map(|s| {
                StratumMoments {
                    p: s.p_hat,
                    pi_d0: s.pi_d0_hat,
                    pi_d1: s.pi_d1_hat,
                    m1c: s.m1c_hat,
                    m0c: s.m0c_hat,
                    m1at: s.m1at_hat.unwrap_or(0.0),
                    m0nt: s.m0nt_hat.unwrap_or(0.0),
                    v1c: s.v1c_hat,
                    v0c: s.v0c_hat,
                    v1at: s.v1at_hat.unwrap_or(0.0),
                    v0nt: s.v0nt_hat.unwrap_or(0.0),
                }
                .normalized()
            })
            .collect()
    }
}

/// `factor * value`, or 0 when `factor` is 0 (the value may then be undefined).
fn zp(factor: f64, value: Option<f64>) -> f64 {
    if factor == 0.0 {
        0.0
    } else {
        factor * value.expect("non-zero factor implies a populated cell")
    }
}

#[derive(Default, Clone, Copy)]
struct Cell {
    sum: CompensatedSum,
    sum_sq: CompensatedSum,
}

/// Residual sums by (stratum, D, A): index `2 * d + a`.
fn cell_sums(dataset: &TrialDataset, residuals: &[f64], n: f64) -> Vec<[Cell; 4]> {
    let mut cells = alloc::vec![[Cell::default(); 4]; dataset.num_strata()];
    for (u, r) in dataset.units().iter().zip(residuals) {
        let c = &mut cells[u.s][2 * u.d as usize + u.a as usize];
        c.sum.add(r / n);
        c.sum_sq.add(r * r / n);
    }
    cells
}

const D0A0: usize = 0;
const D0A1: usize = 1;
const D1A0: usize = 2;
const D1A1: usize = 3;

/// Evaluates the plug-in estimators stratum by stratum. With `clip`,
/// negative variance estimates are replaced by 0 (the flag still records
/// that they occurred).
pub fn estimate_primitives(dataset: &TrialDataset, fit: &SatFit, residuals: &[f64], clip: bool) -> Result<PrimitiveEstimates> {
    if residuals.len() != dataset.len() {
        return Err(Error::InvalidArgument(alloc::string::ToString::to_string("residual count differs from dataset size")));
    }
    let n = fit.counts.n() as f64;
    let cells = cell_sums(dataset, residuals, n);
    let mut strata = Vec::with_capacity(cells.len());
    for (s, c) in fit.counts.per_stratum.iter().enumerate() {
        let (ns, na, nd, nad) = (c.n as f64, c.n_a as f64, c.n_d as f64, c.n_ad as f64);
        let pi_a = na / ns;
        let q1 = nad / na;
        let q0 = (nd - nad) / (ns - na);
        let fs = q1 - q0;
        let beta_s = fit.beta_hat_s[s];
        let gamma_s = fit.gamma_hat_s[s];
        let cell = &cells[s];

        let nt_present = c.n_a > c.n_ad;
        let at_present = c.n_d > c.n_ad;
        let m0nt = nt_present
            .then(|| (n / 2.0) / (na - nad) * (cell[D0A1].sum.value() - cell[D1A1].sum.value()) + gamma_s);
        let m1at = at_present
            .then(|| (n / 2.0) / (nd - nad) * (cell[D1A0].sum.value() - cell[D0A0].sum.value()) + beta_s + gamma_s);
        let m0c = (gamma_s + q0 * beta_s - zp(1.0 - q1, m0nt) - zp(q0, m1at)) / fs;
        let m1c = beta_s + m0c;

        let d1 = m1at.map(|x| m1c - x);
        let d0 = m0nt.map(|x| m0c - x);
        let v1at = at_present.then(|| {
            let b = (1.0 - q0) * d1.unwrap() - zp(1.0 - q1, d0);
            cell[D1A0].sum_sq.value() / (ns / n * (1.0 - pi_a) * q0) - b * b
        });
        let v0nt = nt_present.then(|| {
            let b = zp(q0, d1) - q1 * d0.unwrap();
            n / (na - nad) * cell[D0A1].sum_sq.value() - b * b
        });
        let v1c = {
            let t1 = n / na * cell[D1A1].sum_sq.value();
            let t2 = if q1 == 1.0 {
                0.0
            } else {
                let b = zp(q0, d1) - q1 * d0.unwrap();
                (1.0 - q1) * (1.0 - q1) / q1 * b * b
            };
            let t3 = zp(q0 * fs / q1, d1.map(|x| x * x));
            let t4 = zp(q0, v1at);
            (t1 - t2 - t3 - t4) / fs
        };
        let v0c = {
            let t1 = n / (ns - na) * cell[D0A0].sum_sq.value();
            let t2 = if q0 == 0.0 {
                0.0
            } else {
                let b = (1.0 - q0) * d1.unwrap() - zp(1.0 - q1, d0);
                q0 * q0 / (1.0 - q0) * b * b
            };
            let t3 = zp((na - nad) / na * fs / (1.0 - q0), d0.map(|x| x * x));
            let t4 = zp(1.0 - q1, v0nt);
            (t1 - t2 - t3 - t4) / fs
        };

        let negative = [v1at, v0nt, Some(v1c), Some(v0c)].iter().flatten().any(|v| *v < 0.0);
        let fix = |v: f64| if clip && v < 0.0 { 0.0 } else { v };
        strata.push(PrimitiveStratum {
            p_hat: ns / n,
            pi_a_hat: pi_a,
            pi_d1_hat: q1,
            pi_d0_hat: q0,
            m0nt_hat: m0nt,
            m1at_hat: m1at,
            m0c_hat: m0c,
            m1c_hat: m1c,
            v1at_hat: v1at.map(fix),
            v0nt_hat: v0nt.map(fix),
            v1c_hat: fix(v1c),
            v0c_hat: fix(v0c),
            negative_variance: negative,
        });
    }
    Ok(PrimitiveEstimates { strata, clipped: clip })
}
