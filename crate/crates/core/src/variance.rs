//! Consistent estimators of the asymptotic variances of the SAT, SFE and 2S
//! estimators. All values are on the n·Var scale; a standard error is
//! `sqrt(v / n)`.

use alloc::string::ToString;
use alloc::vec::Vec;

use crate::data::TrialDataset;
use crate::error::{Error, Result};
use crate::estimate::SatFit;
use crate::sum::{ksum, CompensatedSum};

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceBreakdown {
    pub v1_hat: f64,
    pub v0_hat: f64,
    pub vh_hat: f64,
    pub v_sat_hat: f64,
    pub va_sfe_hat: Option<f64>,
    pub va_2s_hat: Option<f64>,
    pub tau: Option<Vec<f64>>,
    /// max_s |n_A(s)/n(s) − n_A/n|; the SFE and 2S formulas presume this
    /// is negligible.
    pub max_pi_deviation: f64,
}

impl VarianceBreakdown {
    pub fn v_sfe_hat(&self) -> Option<f64> {
        self.va_sfe_hat.map(|a| self.v_sat_hat + a)
    }

    pub fn v_2s_hat(&self) -> Option<f64> {
        self.va_2s_hat.map(|a| self.v_sat_hat + a)
    }
}

fn max_pi_deviation(fit: &SatFit) -> f64 {
    let overall = fit.counts.total.assigned_share();
    fit.counts
        .per_stratum
        .iter()
        .map(|c| (c.assigned_share() - overall).abs())
        .fold(0.0, f64::max)
}

/// V̂₁, V̂₀ and V̂_H from the SAT residuals.
pub fn variance_sat(dataset: &TrialDataset, fit: &SatFit, residuals: &[f64]) -> Result<VarianceBreakdown> {
    if !(fit.p_hat_c > 0.0) {
        return Err(Error::NoCompliers);
    }
    if residuals.len() != dataset.len() {
        return Err(Error::InvalidArgument("residual count differs from dataset size".to_string()));
    }
    let k = fit.counts.num_strata();
    let n = fit.counts.n() as f64;
    let dev: Vec<f64> = fit.beta_hat_s.iter().map(|b| b - fit.beta_hat).collect();
    let mut treated = alloc::vec![CompensatedSum::new(); k];
    let mut control = alloc::vec![CompensatedSum::new(); k];
    for (u, r) in dataset.units().iter().zip(residuals) {
        let c = &fit.counts.per_stratum[u.s];
        let x = if u.a {
            let q = c.take_up_treated();
            if u.d { r + (1.0 - q) * dev[u.s] } else { r - q * dev[u.s] }
        } else {
            let q = c.take_up_control();
            if u.d { r + (1.0 - q) * dev[u.s] } else { r - q * dev[u.s] }
        };
        if u.a {
            treated[u.s].add(x * x / n);
        } else {
            control[u.s].add(x * x / n);
        }
    }
    let pc2 = fit.p_hat_c * fit.p_hat_c;
    let per = &fit.counts.per_stratum;
    let v1_hat = ksum(per.iter().zip(&treated).map(|(c, t)| {
        let w = c.n as f64 / c.n_a as f64;
        w * w * t.value()
    })) / pc2;
    let v0_hat = ksum(per.iter().zip(&control).map(|(c, t)| {
        let w = c.n as f64 / c.n_control() as f64;
        w * w * t.value()
    })) / pc2;
    let vh_hat = ksum(per.iter().zip(&dev).map(|(c, d)| {
        let f = c.first_stage();
        c.n as f64 / n * f * f * d * d
    })) / pc2;
    Ok(VarianceBreakdown {
        v1_hat,
        v0_hat,
        vh_hat,
        v_sat_hat: ksum([v1_hat, v0_hat, vh_hat]),
        va_sfe_hat: None,
        va_2s_hat: None,
        tau: None,
        max_pi_deviation: max_pi_deviation(fit),
    })
}

fn check_tau(dataset: &TrialDataset, fit: &SatFit, tau: &[f64]) -> Result<()> {
    if !(fit.p_hat_c > 0.0) {
        return Err(Error::NoCompliers);
    }
    if tau.len() != fit.counts.num_strata() {
        return Err(Error::InvalidArgument("tau vector length differs from strata".to_string()));
    }
    for (s, &t) in tau.iter().enumerate() {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::InvalidTau { stratum: dataset.stratum_label(s).to_string(), value: t });
        }
    }
    Ok(())
}

/// Adds V̂_A^sfe to `base`.
pub fn variance_sfe(dataset: &TrialDataset, fit: &SatFit, base: &VarianceBreakdown, tau: &[f64]) -> Result<VarianceBreakdown> {
    check_tau(dataset, fit, tau)?;
    let n = fit.counts.n() as f64;
    let pc2 = fit.p_hat_c * fit.p_hat_c;
    let va = ksum(fit.counts.per_stratum.iter().zip(&fit.beta_hat_s).zip(tau).map(|((c, b), &t)| {
        let q = c.assigned_share();
        let f = 1.0 - 2.0 * q;
        let fs = c.first_stage();
        let d = b - fit.beta_hat;
        c.n as f64 / n * t * f * f / (q * (1.0 - q)) * fs * fs * d * d
    })) / pc2;
    let mut out = base.clone();
    out.va_sfe_hat = Some(va);
    out.tau = Some(tau.to_vec());
    Ok(out)
}

/// Adds V̂_A^2s to `base`.
pub fn variance_2s(dataset: &TrialDataset, fit: &SatFit, base: &VarianceBreakdown, tau: &[f64]) -> Result<VarianceBreakdown> {
    check_tau(dataset, fit, tau)?;
    let n = fit.counts.n() as f64;
    let per = &fit.counts.per_stratum;
    let dev: Vec<f64> = fit.beta_hat_s.iter().map(|b| b - fit.beta_hat).collect();
    let center_dev = ksum(per.iter().zip(&dev).map(|(c, d)| c.n_d as f64 / n * d));
    let center_gamma = ksum(per.iter().zip(&fit.gamma_hat_s).map(|(c, g)| c.n as f64 / n * g));
    let pc2 = fit.p_hat_c * fit.p_hat_c;
    let va = ksum(per.iter().zip(&dev).zip(&fit.gamma_hat_s).zip(tau).map(|(((c, d), g), &t)| {
        let q = c.assigned_share();
        let w = q * c.take_up_control() + (1.0 - q) * c.take_up_treated();
        let b = w * d - center_dev + g - center_gamma;
        c.n as f64 / n * t / (q * (1.0 - q) * pc2) * b * b
    }));
    let mut out = base.clone();
    out.va_2s_hat = Some(va);
    out.tau = Some(tau.to_vec());
    Ok(out)
}
