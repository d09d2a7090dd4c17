//! Design tools: variance-minimizing treatment propensities, evaluated
//! either on a population model or on pilot data, and the variance gain
//! from a finer stratification.

use alloc::string::String;
use alloc::vec::Vec;

use crate::data::TrialDataset;
use crate::dgp::{self, DgpSpec, StratumMoments};
use crate::error::{Error, Result};
use crate::estimate::{estimate_sat, residuals_sat, SatFit};
use crate::primitives::PrimitiveEstimates;
use crate::sum::ksum;
use crate::variance::{variance_sat, VarianceBreakdown};

#[derive(Debug, Clone, PartialEq)]
pub struct DesignOptions {
    /// Optimal propensities are clamped to `[pi_min, 1 - pi_min]`.
    pub pi_min: f64,
    /// Constant propensities at which to tabulate v_sat.
    pub grid: Vec<f64>,
}

impl Default for DesignOptions {
    fn default() -> Self {
        Self { pi_min: 0.05, grid: Vec::new() }
    }
}

impl DesignOptions {
    /// The grid 0.01, 0.02, …, 0.99.
    pub fn percent_grid() -> Vec<f64> {
        (1..100).map(|i| i as f64 / 100.0).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignReport {
    pub labels: Vec<String>,
    pub beta: f64,
    pub pi1_s: Vec<f64>,
    pub pi2_s: Vec<f64>,
    pub pi_star_s: Vec<f64>,
    pub pi_star: f64,
    pub current_pi: Vec<f64>,
    pub v_at_current: f64,
    pub v_at_pi_star_s: f64,
    pub v_at_pi_star: f64,
    /// `v_at_current / v_at_pi_star_s − 1`.
    pub ess_vector: f64,
    /// `v_at_current / v_at_pi_star − 1`.
    pub ess_constant: f64,
    /// (π, v_sat at constant π) for each grid point.
    pub grid: Vec<(f64, f64)>,
    /// Some Π₁(s) or Π₂(s) is not positive.
    pub nonpositive_pi_terms: bool,
    /// Some optimal propensity hit the clamp.
    pub clamped: bool,
}

/// Minimizer of a/π + b/(1−π) over (0,1), clamped to `[lo, 1 − lo]`.
/// Returns the value and whether clamping was needed.
pub fn optimal_propensity(a: f64, b: f64, lo: f64) -> (f64, bool) {
    let raw = match (a > 0.0, b > 0.0) {
        (true, true) => 1.0 / (1.0 + libm::sqrt(b / a)),
        (false, true) => 0.0,
        (true, false) => 1.0,
        (false, false) => 0.5,
    };
    let clamped = raw.clamp(lo, 1.0 - lo);
    (clamped, clamped != raw)
}

/// SAT asymptotic variance at propensities `pi`, with β held fixed.
pub fn v_sat_with(moments: &[StratumMoments], beta: f64, p_c: f64, pi: &[f64]) -> f64 {
    let main = ksum(moments.iter().zip(pi).map(|(m, &q)| m.p * (m.pi1(beta) / q + m.pi2(beta) / (1.0 - q))));
    main / (p_c * p_c) + dgp::v_h(moments, p_c, beta)
}

fn report(
    labels: Vec<String>,
    moments: &[StratumMoments],
    beta: f64,
    current_pi: Vec<f64>,
    opts: &DesignOptions,
) -> Result<DesignReport> {
    if !(opts.pi_min > 0.0 && opts.pi_min < 0.5) {
        return Err(Error::InvalidArgument(alloc::format!("pi_min = {} outside (0, 0.5)", opts.pi_min)));
    }
    let p_c = ksum(moments.iter().map(|m| m.p * m.p_c()));
    let pi1_s: Vec<f64> = moments.iter().map(|m| m.pi1(beta)).collect();
    let pi2_s: Vec<f64> = moments.iter().map(|m| m.pi2(beta)).collect();
    let mut clamped = false;
    let pi_star_s: Vec<f64> = pi1_s
        .iter()
        .zip(&pi2_s)
        .map(|(&a, &b)| {
            let (q, c) = optimal_propensity(a, b, opts.pi_min);
            clamped |= c;
            q
        })
        .collect();
    let s1 = ksum(moments.iter().zip(&pi1_s).map(|(m, a)| m.p * a));
    let s2 = ksum(moments.iter().zip(&pi2_s).map(|(m, b)| m.p * b));
    let (pi_star, c) = optimal_propensity(s1, s2, opts.pi_min);
    clamped |= c;
    let k = moments.len();
    let v = |pi: &[f64]| v_sat_with(moments, beta, p_c, pi);
    let v_at_current = v(&current_pi);
    let v_at_pi_star_s = v(&pi_star_s);
    let v_at_pi_star = v(&alloc::vec![pi_star; k]);
    let grid = opts.grid.iter().map(|&q| (q, v(&alloc::vec![q; k]))).collect();
    Ok(DesignReport {
        labels,
        beta,
        nonpositive_pi_terms: pi1_s.iter().chain(&pi2_s).any(|x| !(*x > 0.0)),
        pi1_s,
        pi2_s,
        pi_star_s,
        pi_star,
        current_pi,
        v_at_current,
        v_at_pi_star_s,
        v_at_pi_star,
        ess_vector: dgp::effective_sample_ratio(v_at_current, v_at_pi_star_s)?,
        ess_constant: dgp::effective_sample_ratio(v_at_current, v_at_pi_star)?,
        grid,
        clamped,
    })
}

/// Optimal propensities computed from a population model.
pub fn optimal_pi_population(spec: &DgpSpec, opts: &DesignOptions) -> Result<DesignReport> {
    let summary = dgp::population_summary(spec)?;
    report(spec.labels(), &spec.moments(), summary.beta, spec.pi_a(), opts)
}

/// Optimal propensities estimated from a pilot trial, with β̂_sat in place of β.
pub fn optimal_pi_pilot(
    dataset: &TrialDataset,
    fit: &SatFit,
    primitives: &PrimitiveEstimates,
    opts: &DesignOptions,
) -> Result<DesignReport> {
    let current = fit.counts.per_stratum.iter().map(|c| c.assigned_share()).collect();
    report(dataset.strata().to_vec(), &primitives.moments(), fit.beta_hat, current, opts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinementReport {
    pub coarse: VarianceBreakdown,
    pub fine: VarianceBreakdown,
    pub fine_labels: Vec<String>,
    /// `coarse.v_sat_hat / fine.v_sat_hat − 1`.
    pub ess: f64,
    /// Largest gap between a stratum's treated share and the overall share.
    pub max_pi_deviation: f64,
}

/// Estimates V_sat of the pilot as run and of a τ = 0 trial stratified by
/// the pilot's auxiliary labels.
pub fn refined_strata_variance(pilot: &TrialDataset) -> Result<RefinementReport> {
    let fine_data = pilot.refine_by_aux()?;
    let fit = estimate_sat(pilot)?;
    let coarse = variance_sat(pilot, &fit, &residuals_sat(pilot, &fit))?;
    let fine_fit = estimate_sat(&fine_data)?;
    let fine = variance_sat(&fine_data, &fine_fit, &residuals_sat(&fine_data, &fine_fit))?;
    Ok(RefinementReport {
        ess: dgp::effective_sample_ratio(coarse.v_sat_hat, fine.v_sat_hat)?,
        max_pi_deviation: coarse.max_pi_deviation,
        fine_labels: fine_data.strata().to_vec(),
        coarse,
        fine,
    })
}
