//! Closed-form IV estimators of the LATE: fully saturated (SAT), strata
//! fixed effects (SFE) and two-sample (2S).

use alloc::vec::Vec;

use crate::data::{count, StratumCounts, TrialDataset};
use crate::error::{Error, Result};
use crate::sum::{ksum, CompensatedSum};

/// Outcome sums per stratum: over all units and over assigned units.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeSums {
    pub sum_y: Vec<f64>,
    pub sum_y_treated: Vec<f64>,
    pub total_y: f64,
    pub total_ay: f64,
}

pub fn outcome_sums(dataset: &TrialDataset) -> OutcomeSums {
    let k = dataset.num_strata();
    let mut all = alloc::vec![CompensatedSum::new(); k];
    let mut treated = alloc::vec![CompensatedSum::new(); k];
    for u in dataset.units() {
        all[u.s].add(u.y);
        if u.a {
            treated[u.s].add(u.y);
        }
    }
    let sum_y: Vec<f64> = all.iter().map(|c| c.value()).collect();
    let sum_y_treated: Vec<f64> = treated.iter().map(|c| c.value()).collect();
    OutcomeSums {
        total_y: ksum(sum_y.iter().copied()),
        total_ay: ksum(sum_y_treated.iter().copied()),
        sum_y,
        sum_y_treated,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SatFit {
    pub beta_hat: f64,
    pub beta_hat_s: Vec<f64>,
    pub gamma_hat_s: Vec<f64>,
    pub p_hat_c: f64,
    pub p_hat_sc: Vec<f64>,
    pub p_hat_s_given_c: Vec<f64>,
    pub counts: StratumCounts,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SfeFit {
    pub beta_hat: f64,
    pub gamma_hat_s: Vec<f64>,
    pub lambda_n: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoSFit {
    pub beta_hat: f64,
    pub gamma_hat: f64,
    pub xi_n: f64,
}

fn label(dataset: &TrialDataset, s: usize) -> alloc::string::String {
    alloc::string::ToString::to_string(dataset.stratum_label(s))
}

fn check_arms(dataset: &TrialDataset, counts: &StratumCounts) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for (s, c) in counts.per_stratum.iter().enumerate() {
        if c.n_a == 0 || c.n_a == c.n {
            return Err(Error::EmptyArm(label(dataset, s)));
        }
    }
    Ok(())
}

/// n(s) n_AD(s) − n_A(s) n_D(s) as a float, computed exactly in integers.
fn rank_numerator(n: u64, n_a: u64, n_d: u64, n_ad: u64) -> f64 {
    (n as i128 * n_ad as i128 - n_a as i128 * n_d as i128) as f64
}

pub fn estimate_sat(dataset: &TrialDataset) -> Result<SatFit> {
    let counts = count(dataset);
    check_arms(dataset, &counts)?;
    for (s, c) in counts.per_stratum.iter().enumerate() {
        if c.rank_sign() != core::cmp::Ordering::Greater {
            return Err(Error::WeakFirstStage(label(dataset, s)));
        }
    }
    let sums = outcome_sums(dataset);
    let n = counts.n() as f64;
    let k = counts.num_strata();
    let mut beta_hat_s = Vec::with_capacity(k);
    let mut gamma_hat_s = Vec::with_capacity(k);
    let mut p_hat_sc = Vec::with_capacity(k);
    for (s, c) in counts.per_stratum.iter().enumerate() {
        let den = rank_numerator(c.n, c.n_a, c.n_d, c.n_ad);
        let (sy, sya) = (sums.sum_y[s], sums.sum_y_treated[s]);
        beta_hat_s.push((c.n as f64 * sya - c.n_a as f64 * sy) / den);
        gamma_hat_s.push((c.n_ad as f64 * sy - c.n_d as f64 * sya) / den);
        p_hat_sc.push(c.n as f64 / n * c.first_stage());
    }
    let p_hat_c = ksum(p_hat_sc.iter().copied());
    if !(p_hat_c > 0.0) {
        return Err(Error::NoCompliers);
    }
    let p_hat_s_given_c: Vec<f64> = p_hat_sc.iter().map(|p| p / p_hat_c).collect();
    let beta_hat = ksum(p_hat_s_given_c.iter().zip(&beta_hat_s).map(|(w, b)| w * b));
    Ok(SatFit { beta_hat, beta_hat_s, gamma_hat_s, p_hat_c, p_hat_sc, p_hat_s_given_c, counts })
}

pub fn estimate_sfe(dataset: &TrialDataset) -> Result<SfeFit> {
    let counts = count(dataset);
    check_arms(dataset, &counts)?;
    let sums = outcome_sums(dataset);
    let n = counts.n() as f64;
    let per = &counts.per_stratum;
    if per.iter().all(|c| rank_numerator(c.n, c.n_a, c.n_d, c.n_ad) == 0.0) {
        return Err(Error::SingularDenominator);
    }
    let lambda_n = ksum(per.iter().map(|c| rank_numerator(c.n, c.n_a, c.n_d, c.n_ad) / c.n as f64)) / n;
    if lambda_n == 0.0 {
        return Err(Error::SingularDenominator);
    }
    let adjust = ksum(per.iter().zip(&sums.sum_y).map(|(c, sy)| c.assigned_share() * sy / n));
    let beta_hat = (sums.total_ay / n - adjust) / lambda_n;
    let gamma_hat_s = per
        .iter()
        .zip(&sums.sum_y)
        .map(|(c, sy)| sy / c.n as f64 - c.n_d as f64 / c.n as f64 * beta_hat)
        .collect();
    Ok(SfeFit { beta_hat, gamma_hat_s, lambda_n })
}

pub fn estimate_2s(dataset: &TrialDataset) -> Result<TwoSFit> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let t = count(dataset).total;
    let num = rank_numerator(t.n, t.n_a, t.n_d, t.n_ad);
    if num == 0.0 {
        return Err(Error::SingularDenominator);
    }
    let sums = outcome_sums(dataset);
    let n = t.n as f64;
    let xi_n = num / (n * n);
    let beta_hat = (sums.total_ay / n - t.n_a as f64 / n * sums.total_y / n) / xi_n;
    let gamma_hat = sums.total_y / n - t.n_d as f64 / n * beta_hat;
    Ok(TwoSFit { beta_hat, gamma_hat, xi_n })
}

/// SAT IV residuals û_i = Y_i − γ̂(s_i) − D_i β̂(s_i).
pub fn residuals_sat(dataset: &TrialDataset, fit: &SatFit) -> Vec<f64> {
    dataset
        .units()
        .iter()
        .map(|u| {
            let fitted = fit.gamma_hat_s[u.s] + if u.d { fit.beta_hat_s[u.s] } else { 0.0 };
            u.y - fitted
        })
        .collect()
}
