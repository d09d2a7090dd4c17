//! Population model: a stratified complier/always-taker/never-taker law,
//! a sampler for trials drawn from it, and closed-form population
//! quantities (LATE, asymptotic variances, probability limits).

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::{TrialDataset, UnitRecord};
use crate::error::{Error, Result};
use crate::randomize::{self, Mechanism};
use crate::sum::ksum;

const PROB_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutcomeFamily {
    #[default]
    Normal,
}

/// Parameters of one stratum.
///
/// Always-taker moments are ignored when `p_at == 0`, never-taker moments
/// when `p_nt == 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct StratumSpec {
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

#[derive(Debug, Clone, PartialEq)]
pub struct DgpSpec {
    strata: Vec<StratumSpec>,
    constant_pi: bool,
    family: OutcomeFamily,
}

fn invalid(msg: String) -> Error {
    Error::InvalidSpec(msg)
}

fn check_prob(label: &str, name: &str, v: f64) -> Result<()> {
    if !(v.is_finite() && (0.0..=1.0).contains(&v)) {
        return Err(invalid(format!("stratum {label:?}: {name} = {v} is not a probability")));
    }
    Ok(())
}

fn check_var(label: &str, name: &str, v: f64) -> Result<()> {
    if !(v.is_finite() && v >= 0.0) {
        return Err(invalid(format!("stratum {label:?}: {name} = {v} must be a finite non-negative variance")));
    }
    Ok(())
}

fn check_mean(label: &str, name: &str, v: f64) -> Result<()> {
    if !v.is_finite() {
        return Err(invalid(format!("stratum {label:?}: {name} is not finite")));
    }
    Ok(())
}

impl DgpSpec {
    /// Validates the parameters and orders the strata by label.
    pub fn new(mut strata: Vec<StratumSpec>, constant_pi: bool) -> Result<Self> {
        if strata.is_empty() {
            return Err(invalid("no strata".to_string()));
        }
        strata.sort_by(|a, b| a.label.cmp(&b.label));
        if let Some(w) = strata.windows(2).find(|w| w[0].label == w[1].label) {
            return Err(invalid(format!("duplicate stratum label {:?}", w[0].label)));
        }
        for s in &strata {
            let l = s.label.as_str();
            if !(s.p.is_finite() && s.p > 0.0) {
                return Err(invalid(format!("stratum {l:?}: p = {} must be positive", s.p)));
            }
            if !(s.pi_a > 0.0 && s.pi_a < 1.0) {
                return Err(Error::InvalidPropensity { stratum: s.label.clone(), value: s.pi_a });
            }
            if !(0.0..=1.0).contains(&s.tau) {
                return Err(Error::InvalidTau { stratum: s.label.clone(), value: s.tau });
            }
            check_prob(l, "p_at", s.p_at)?;
            check_prob(l, "p_nt", s.p_nt)?;
            check_prob(l, "p_c", s.p_c)?;
            if (s.p_at + s.p_nt + s.p_c - 1.0).abs() > PROB_TOL {
                return Err(invalid(format!("stratum {l:?}: type probabilities do not sum to one")));
            }
            if s.p_c <= 0.0 {
                return Err(Error::DegenerateComplier(s.label.clone()));
            }
            check_mean(l, "m1c", s.m1c)?;
            check_mean(l, "m0c", s.m0c)?;
            check_var(l, "v1c", s.v1c)?;
            check_var(l, "v0c", s.v0c)?;
            if s.p_at > 0.0 {
                check_mean(l, "m1at", s.m1at)?;
                check_var(l, "v1at", s.v1at)?;
            }
            if s.p_nt > 0.0 {
                check_mean(l, "m0nt", s.m0nt)?;
                check_var(l, "v0nt", s.v0nt)?;
            }
        }
        let total = ksum(strata.iter().map(|s| s.p));
        if (total - 1.0).abs() > PROB_TOL {
            return Err(invalid(format!("stratum probabilities sum to {total}, not 1")));
        }
        if constant_pi && strata.iter().any(|s| s.pi_a != strata[0].pi_a) {
            return Err(invalid("constant-propensity flag set but pi_a varies across strata".to_string()));
        }
        Ok(Self { strata, constant_pi, family: OutcomeFamily::Normal })
    }

    pub fn strata(&self) -> &[StratumSpec] {
        &self.strata
    }

    pub fn num_strata(&self) -> usize {
        self.strata.len()
    }

    pub fn labels(&self) -> Vec<String> {
        self.strata.iter().map(|s| s.label.clone()).collect()
    }

    pub fn constant_pi(&self) -> bool {
        self.constant_pi
    }

    pub fn family(&self) -> OutcomeFamily {
        self.family
    }

    pub fn pi_a(&self) -> Vec<f64> {
        self.strata.iter().map(|s| s.pi_a).collect()
    }

    /// True when π_A(s) takes a single value, whatever the flag says.
    pub fn has_uniform_pi(&self) -> bool {
        self.strata.iter().all(|s| s.pi_a == self.strata[0].pi_a)
    }

    /// Same law with τ(s) = `tau` everywhere.
    pub fn with_tau(&self, tau: f64) -> Result<Self> {
        let mut strata = self.strata.clone();
        strata.iter_mut().for_each(|s| s.tau = tau);
        Self::new(strata, self.constant_pi)
    }

    /// Same law with a new propensity per stratum (in label order). The
    /// constant-π flag is recomputed.
    pub fn with_pi(&self, pi: &[f64]) -> Result<Self> {
        if pi.len() != self.strata.len() {
            return Err(Error::InvalidArgument("propensity vector length differs from strata".to_string()));
        }
        let mut strata = self.strata.clone();
        strata.iter_mut().zip(pi).for_each(|(s, &p)| s.pi_a = p);
        let constant = pi.iter().all(|&p| p == pi[0]);
        Self::new(strata, constant)
    }

    pub fn moments(&self) -> Vec<StratumMoments> {
        self.strata.iter().map(StratumMoments::from_spec).collect()
    }
}

/// First two moments of one stratum, in the parameterization shared by the
/// population formulas and their sample analogues.
///
/// Always-taker (never-taker) moments are stored as 0 whenever π_D(0)(s)
/// (respectively 1 − π_D(1)(s)) is 0, so every product with the vanishing
/// factor is exactly 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StratumMoments {
    pub p: f64,
    pub pi_d0: f64,
    pub pi_d1: f64,
    pub m1c: f64,
    pub m0c: f64,
    pub m1at: f64,
    pub m0nt: f64,
    pub v1c: f64,
    pub v0c: f64,
    pub v1at: f64,
    pub v0nt: f64,
}

impl StratumMoments {
    fn from_spec(s: &StratumSpec) -> Self {
        Self {
            p: s.p,
            pi_d0: s.p_at,
            pi_d1: s.p_at + s.p_c,
            m1c: s.m1c,
            m0c: s.m0c,
            m1at: s.m1at,
            m0nt: s.m0nt,
            v1c: s.v1c,
            v0c: s.v0c,
            v1at: s.v1at,
            v0nt: s.v0nt,
        }
        .normalized()
    }

    /// Applies the zero-product convention.
    pub fn normalized(mut self) -> Self {
        if self.pi_d0 == 0.0 {
            self.m1at = 0.0;
            self.v1at = 0.0;
        }
        if self.pi_d1 == 1.0 {
            self.m0nt = 0.0;
            self.v0nt = 0.0;
        }
        self
    }

    /// P(C | S = s).
    pub fn p_c(&self) -> f64 {
        self.pi_d1 - self.pi_d0
    }

    pub fn beta(&self) -> f64 {
        self.m1c - self.m0c
    }

    /// Intercept γ(s) of the saturated regression.
    pub fn gamma(&self) -> f64 {
        self.pi_d1 * self.m0c - self.pi_d0 * self.m1c + self.pi_d0 * self.m1at + (1.0 - self.pi_d1) * self.m0nt
    }

    /// Variance of Y − β(s)D among assigned units.
    fn treated_arm(&self) -> f64 {
        let a1 = self.m1c - self.m1at;
        self.v1at * self.pi_d0
            + self.v0nt * (1.0 - self.pi_d1)
            + self.v1c * self.p_c()
            + a1 * a1 * self.pi_d0 * self.p_c() / self.pi_d1
    }

    /// Variance of Y − β(s)D among control units.
    fn control_arm(&self) -> f64 {
        let a0 = self.m0c - self.m0nt;
        self.v1at * self.pi_d0
            + self.v0nt * (1.0 - self.pi_d1)
            + self.v0c * self.p_c()
            + a0 * a0 * (1.0 - self.pi_d1) * self.p_c() / (1.0 - self.pi_d0)
    }

    fn d1_bracket(&self, dev: f64) -> f64 {
        let a1 = self.m1c - self.m1at;
        let a0 = self.m0c - self.m0nt;
        -self.pi_d0 * a1 + self.pi_d1 * a0 + self.pi_d1 * dev
    }

    fn d0_bracket(&self, dev: f64) -> f64 {
        let a1 = self.m1c - self.m1at;
        let a0 = self.m0c - self.m0nt;
        -(1.0 - self.pi_d0) * a1 + (1.0 - self.pi_d1) * a0 + (1.0 - self.pi_d0) * dev
    }

    /// Π₁(s): numerator of the 1/π_A(s) part of the SAT variance (times P(C)²/p(s)).
    pub fn pi1(&self, beta: f64) -> f64 {
        let b = self.d1_bracket(self.beta() - beta);
        self.treated_arm() + (1.0 - self.pi_d1) / self.pi_d1 * b * b
    }

    /// Π₂(s): the 1/(1 − π_A(s)) counterpart of Π₁(s).
    pub fn pi2(&self, beta: f64) -> f64 {
        let b = self.d0_bracket(self.beta() - beta);
        self.control_arm() + self.pi_d0 / (1.0 - self.pi_d0) * b * b
    }
}

/// P(C) and the LATE implied by a set of stratum moments.
pub fn late(moments: &[StratumMoments]) -> (f64, f64) {
    let p_c = ksum(moments.iter().map(|m| m.p * m.p_c()));
    let beta = ksum(moments.iter().map(|m| m.p * m.p_c() * m.beta())) / p_c;
    (p_c, beta)
}

/// V_H: dispersion of the stratum effects.
pub fn v_h(moments: &[StratumMoments], p_c: f64, beta: f64) -> f64 {
    ksum(moments.iter().map(|m| {
        let d = m.p_c() * (m.beta() - beta);
        m.p * d * d
    })) / (p_c * p_c)
}

/// SAT asymptotic variance when stratum s is treated with probability `pi[s]`.
pub fn v_sat_at(moments: &[StratumMoments], pi: &[f64]) -> f64 {
    let (p_c, beta) = late(moments);
    let main = ksum(moments.iter().zip(pi).map(|(m, &q)| m.p * (m.pi1(beta) / q + m.pi2(beta) / (1.0 - q))));
    main / (p_c * p_c) + v_h(moments, p_c, beta)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceComponents {
    pub vy1: f64,
    pub vy0: f64,
    pub vd1: f64,
    pub vd0: f64,
    pub vh: f64,
    pub va_sfe: f64,
    pub va_2s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PopulationSummary {
    pub labels: Vec<String>,
    pub beta: f64,
    pub beta_s: Vec<f64>,
    pub gamma_s: Vec<f64>,
    pub p_c: f64,
    pub p_c_s: Vec<f64>,
    pub p_s_given_c: Vec<f64>,
    pub v_sat: f64,
    pub v_sfe: f64,
    pub v_2s: f64,
    pub components: VarianceComponents,
    /// Asymptotic variance of each stratum-specific estimator.
    pub v_sat_s: Vec<f64>,
    pub plim_sfe: f64,
    pub plim_2s: f64,
    pub omega_s: Vec<f64>,
    pub pi1_s: Vec<f64>,
    pub pi2_s: Vec<f64>,
    /// Whether π_A(s) is the same in every stratum. When false the SFE and
    /// 2S estimators are centred at `plim_sfe` and `plim_2s`, not `beta`.
    pub constant_pi: bool,
}

pub fn population_summary(spec: &DgpSpec) -> Result<PopulationSummary> {
    let ms = spec.moments();
    for (m, s) in ms.iter().zip(spec.strata()) {
        if m.p_c() <= 0.0 {
            return Err(Error::DegenerateComplier(s.label.clone()));
        }
    }
    let pi: Vec<f64> = spec.pi_a();
    let tau: Vec<f64> = spec.strata().iter().map(|s| s.tau).collect();
    let (p_c, beta) = late(&ms);
    let pc2 = p_c * p_c;

    let beta_s: Vec<f64> = ms.iter().map(|m| m.beta()).collect();
    let gamma_s: Vec<f64> = ms.iter().map(|m| m.gamma()).collect();
    let p_c_s: Vec<f64> = ms.iter().map(|m| m.p_c()).collect();
    let p_s_given_c: Vec<f64> = ms.iter().map(|m| m.p * m.p_c() / p_c).collect();

    let vy1 = ksum(ms.iter().zip(&pi).map(|(m, q)| m.p / q * m.treated_arm())) / pc2;
    let vy0 = ksum(ms.iter().zip(&pi).map(|(m, q)| m.p / (1.0 - q) * m.control_arm())) / pc2;
    let vd1 = ksum(ms.iter().zip(&pi).map(|(m, q)| {
        let b = m.d1_bracket(m.beta() - beta);
        m.p * (1.0 - m.pi_d1) / (q * m.pi_d1) * b * b
    })) / pc2;
    let vd0 = ksum(ms.iter().zip(&pi).map(|(m, q)| {
        let b = m.d0_bracket(m.beta() - beta);
        m.p * m.pi_d0 / ((1.0 - q) * (1.0 - m.pi_d0)) * b * b
    })) / pc2;
    let vh = v_h(&ms, p_c, beta);
    let v_sat = ksum([vy1, vy0, vd1, vd0, vh]);

    let va_sfe = ksum(ms.iter().zip(&pi).zip(&tau).map(|((m, &q), &t)| {
        let d = m.p_c() * (m.beta() - beta);
        let f = 1.0 - 2.0 * q;
        m.p * t * f * f / (q * (1.0 - q)) * d * d
    })) / pc2;

    let center = ksum(ms.iter().zip(&pi).map(|(m, &q)| {
        m.p * ((q * m.pi_d1 + (1.0 - q) * m.pi_d0) * (m.beta() - beta) + m.gamma())
    }));
    let va_2s = ksum(ms.iter().zip(&pi).zip(&tau).map(|((m, &q), &t)| {
        let b = (q * m.pi_d0 + (1.0 - q) * m.pi_d1) * (m.beta() - beta) + m.gamma() - center;
        m.p * t / (q * (1.0 - q)) * b * b
    })) / pc2;

    let v_sat_s: Vec<f64> = ms
        .iter()
        .zip(&pi)
        .map(|(m, &q)| {
            let b1 = m.d1_bracket(0.0);
            let b0 = m.d0_bracket(0.0);
            let arm1 = m.treated_arm() + (1.0 - m.pi_d1) / m.pi_d1 * b1 * b1;
            let arm0 = m.control_arm() + m.pi_d0 / (1.0 - m.pi_d0) * b0 * b0;
            (arm1 / q + arm0 / (1.0 - q)) / (m.p * m.p_c() * m.p_c())
        })
        .collect();

    let w: Vec<f64> = ms.iter().zip(&pi).map(|(m, &q)| q * (1.0 - q) * m.p * m.p_c()).collect();
    let wsum = ksum(w.iter().copied());
    let omega_s: Vec<f64> = w.iter().map(|x| x / wsum).collect();
    let plim_sfe = ksum(omega_s.iter().zip(&beta_s).map(|(o, b)| o * b));

    let pa = ksum(ms.iter().zip(&pi).map(|(m, q)| m.p * q));
    let num = ksum(ms.iter().zip(&pi).map(|(m, &q)| {
        m.p * ((q - pa) * m.pi_d0 * m.m1at + (q - pa) * (1.0 - m.pi_d1) * m.m0nt + (1.0 - pa) * q * m.p_c() * m.m1c
            - pa * (1.0 - q) * m.p_c() * m.m0c)
    }));
    let den = (1.0 - pa) * ksum(ms.iter().zip(&pi).map(|(m, q)| m.p * q * m.pi_d1))
        - pa * ksum(ms.iter().zip(&pi).map(|(m, q)| m.p * (1.0 - q) * m.pi_d0));
    let plim_2s = num / den;

    Ok(PopulationSummary {
        labels: spec.labels(),
        beta,
        beta_s,
        gamma_s,
        p_c,
        p_c_s,
        p_s_given_c,
        v_sat,
        v_sfe: v_sat + va_sfe,
        v_2s: v_sat + va_2s,
        components: VarianceComponents { vy1, vy0, vd1, vd0, vh, va_sfe, va_2s },
        v_sat_s,
        plim_sfe,
        plim_2s,
        omega_s,
        pi1_s: ms.iter().map(|m| m.pi1(beta)).collect(),
        pi2_s: ms.iter().map(|m| m.pi2(beta)).collect(),
        constant_pi: spec.has_uniform_pi(),
    })
}

/// Extra sample share the base design needs to match the alternative:
/// `v_base / v_alt − 1`.
pub fn effective_sample_ratio(v_base: f64, v_alt: f64) -> Result<f64> {
    if !(v_alt > 0.0) {
        return Err(Error::NonpositiveVariance(v_alt));
    }
    Ok(v_base / v_alt - 1.0)
}

fn labels_for(k: usize) -> Vec<String> {
    let width = if k >= 10 { 2 } else { 1 };
    (1..=k).map(|i| format!("{i:0width$}")).collect()
}

#[allow(clippy::too_many_arguments)]
fn design_from(
    p: &[f64],
    pi: &[f64],
    p_at: &[f64],
    p_nt: &[f64],
    m0c: &[f64],
    m1c: &[f64],
    m0nt: &[f64],
    m1at: &[f64],
    var: [f64; 4],
) -> Result<DgpSpec> {
    let [v0c, v1c, v0nt, v1at] = var;
    let strata = labels_for(p.len())
        .into_iter()
        .enumerate()
        .map(|(i, label)| StratumSpec {
            label,
            p: p[i],
            pi_a: pi[i],
            tau: 1.0,
            p_at: p_at[i],
            p_nt: p_nt[i],
            p_c: 1.0 - p_at[i] - p_nt[i],
            m1c: m1c[i],
            m0c: m0c[i],
            m1at: m1at[i],
            m0nt: m0nt[i],
            v1c,
            v0c,
            v1at,
            v0nt,
        })
        .collect();
    let constant = pi.iter().all(|&q| q == pi[0]);
    DgpSpec::new(strata, constant)
}

/// The four reference simulation designs. τ(s) is 1 (SRS); use
/// [`DgpSpec::with_tau`] for SBR.
pub fn builtin_design(k: u32) -> Result<DgpSpec> {
    let five = [0.2; 5];
    let m0nt5 = [-1.0, -0.75, -0.5, -0.25, 0.0];
    let m1at5 = [2.0, 2.25, 2.5, 2.75, 3.0];
    let ramp = [0.0, 0.25, 0.5, 0.75, 1.0];
    let var1 = [0.5, 3.0, 1.0, 1.0];
    match k {
        1 => design_from(&five, &[0.5; 5], &[0.15; 5], &[0.15; 5], &[0.0; 5], &[1.0; 5], &m0nt5, &m1at5, var1),
        2 => design_from(
            &[0.1; 10],
            &[0.5; 10],
            &[0.15; 10],
            &[0.15; 10],
            &[-0.5, 0.5, -0.5, 0.5, -0.5, 0.5, -0.5, 0.5, -0.5, 0.5],
            &[0.5, 1.5, 0.5, 1.5, 0.5, 1.5, 0.5, 1.5, 0.5, 1.5],
            &[-1.5, -0.5, -1.25, -0.25, -1.0, 0.0, -0.75, 0.25, -0.5, 0.5],
            &[1.5, 2.5, 1.75, 2.75, 2.0, 3.0, 2.25, 3.25, 2.5, 3.5],
            [0.25, 2.75, 0.75, 0.75],
        ),
        3 => design_from(
            &five,
            &[0.7; 5],
            &[0.15; 5],
            &[0.15; 5],
            &ramp,
            &[-1.0, -0.75, 1.5, 3.75, 4.0],
            &m0nt5,
            &m1at5,
            var1,
        ),
        4 => design_from(
            &five,
            &[0.3, 0.3, 0.6, 0.4, 0.8],
            &[0.15, 0.15, 0.1, 0.05, 0.05],
            &[0.45, 0.35, 0.1, 0.05, 0.05],
            &ramp,
            &[-3.0, -4.39, 1.4, 3.75, 5.0],
            &m0nt5,
            &m1at5,
            var1,
        ),
        other => Err(Error::UnknownDesign(other)),
    }
}

/// Pooled mean and variance of groups given as (weight, mean, variance).
fn pool(groups: impl Iterator<Item = (f64, f64, f64)> + Clone) -> (f64, f64, f64) {
    let w = ksum(groups.clone().map(|g| g.0));
    if w == 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let mean = ksum(groups.clone().map(|(wi, m, _)| wi * m)) / w;
    let var = ksum(groups.map(|(wi, m, v)| wi * (v + (m - mean) * (m - mean)))) / w;
    (w, mean, var)
}

/// Merges strata according to `mapping` (fine label to coarse label).
/// Requires a constant propensity; τ of a merged stratum is the
/// probability-weighted mean.
pub fn coarsen(spec: &DgpSpec, mapping: &BTreeMap<String, String>) -> Result<DgpSpec> {
    if !spec.has_uniform_pi() {
        return Err(invalid("coarsening needs a constant treatment propensity".to_string()));
    }
    let mut groups: BTreeMap<&str, Vec<&StratumSpec>> = BTreeMap::new();
    for s in spec.strata() {
        let target = mapping.get(&s.label).ok_or_else(|| Error::UnmappedStratum(s.label.clone()))?;
        groups.entry(target.as_str()).or_default().push(s);
    }
    let mut out = Vec::with_capacity(groups.len());
    for (label, members) in groups {
        let it = members.iter();
        let p = ksum(it.clone().map(|s| s.p));
        let (w_c, m1c, v1c) = pool(it.clone().map(|s| (s.p * s.p_c, s.m1c, s.v1c)));
        let (_, m0c, v0c) = pool(it.clone().map(|s| (s.p * s.p_c, s.m0c, s.v0c)));
        let (w_at, m1at, v1at) = pool(it.clone().map(|s| (s.p * s.p_at, s.m1at, s.v1at)));
        let (w_nt, m0nt, v0nt) = pool(it.clone().map(|s| (s.p * s.p_nt, s.m0nt, s.v0nt)));
        out.push(StratumSpec {
            label: label.to_string(),
            p,
            pi_a: members[0].pi_a,
            tau: ksum(it.clone().map(|s| s.p * s.tau)) / p,
            p_at: w_at / p,
            p_nt: w_nt / p,
            p_c: w_c / p,
            m1c,
            m0c,
            m1at,
            m0nt,
            v1c,
            v0c,
            v1at,
            v0nt,
        });
    }
    DgpSpec::new(out, spec.constant_pi())
}

fn draw_index<R: Rng + ?Sized>(rng: &mut R, probs: impl Iterator<Item = f64>) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.enumerate() {
        if p > 0.0 {
            last = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last
}

#[derive(Clone, Copy)]
enum Type {
    AlwaysTaker,
    NeverTaker,
    Complier,
}

struct Draws {
    fine: Vec<usize>,
    types: Vec<Type>,
}

fn draw_population<R: Rng + ?Sized>(spec: &DgpSpec, n: usize, rng: &mut R) -> Draws {
    let strata = spec.strata();
    let mut fine = Vec::with_capacity(n);
    let mut types = Vec::with_capacity(n);
    for _ in 0..n {
        let s = draw_index(rng, strata.iter().map(|x| x.p));
        let st = &strata[s];
        let t = match draw_index(rng, [st.p_at, st.p_nt, st.p_c].into_iter()) {
            0 => Type::AlwaysTaker,
            1 => Type::NeverTaker,
            _ => Type::Complier,
        };
        fine.push(s);
        types.push(t);
    }
    Draws { fine, types }
}

fn realize<R: Rng + ?Sized>(spec: &DgpSpec, draws: &Draws, assigned: &[bool], rng: &mut R) -> Vec<(f64, bool)> {
    draws
        .fine
        .iter()
        .zip(&draws.types)
        .zip(assigned)
        .map(|((&s, &t), &a)| {
            let st = &spec.strata()[s];
            let (d, mean, var) = match (t, a) {
                (Type::AlwaysTaker, _) => (true, st.m1at, st.v1at),
                (Type::NeverTaker, _) => (false, st.m0nt, st.v0nt),
                (Type::Complier, true) => (true, st.m1c, st.v1c),
                (Type::Complier, false) => (false, st.m0c, st.v0c),
            };
            let z: f64 = rng.sample(StandardNormal);
            (mean + libm::sqrt(var) * z, d)
        })
        .collect()
}

/// Compacts ids onto the labels actually present.
fn compact(ids: &[usize], labels: &[String]) -> (Vec<usize>, Vec<String>) {
    let mut present = alloc::vec![false; labels.len()];
    ids.iter().for_each(|&s| present[s] = true);
    let mut remap = alloc::vec![usize::MAX; labels.len()];
    let mut kept = Vec::new();
    for (i, l) in labels.iter().enumerate() {
        if present[i] {
            remap[i] = kept.len();
            kept.push(l.clone());
        }
    }
    (ids.iter().map(|&s| remap[s]).collect(), kept)
}

/// Draws an i.i.d. trial of `n` units and assigns treatment with `mechanism`.
/// Strata that receive no unit are absent from the dataset.
pub fn sample<R: Rng + ?Sized>(spec: &DgpSpec, n: usize, mechanism: Mechanism, rng: &mut R) -> Result<TrialDataset> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let draws = draw_population(spec, n, rng);
    let plan = randomize::assign(mechanism, &draws.fine, &spec.pi_a(), rng)?;
    let outcomes = realize(spec, &draws, &plan.assignments, rng);
    let (ids, labels) = compact(&draws.fine, &spec.labels());
    let units = outcomes
        .iter()
        .zip(&plan.assignments)
        .zip(&ids)
        .map(|((&(y, d), &a), &s)| UnitRecord { y, d, a, s })
        .collect();
    Ok(TrialDataset::from_units(units, labels)?.with_mechanism(mechanism))
}

/// Like [`sample`], but randomizes within the coarse strata given by
/// `mapping`. The dataset's strata are the coarse labels and its auxiliary
/// column holds the fine labels. All fine strata sharing a coarse stratum
/// must share π_A.
pub fn sample_coarsened<R: Rng + ?Sized>(
    spec: &DgpSpec,
    n: usize,
    mechanism: Mechanism,
    mapping: &BTreeMap<String, String>,
    rng: &mut R,
) -> Result<TrialDataset> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut coarse_labels: Vec<String> = Vec::new();
    for s in spec.strata() {
        let c = mapping.get(&s.label).ok_or_else(|| Error::UnmappedStratum(s.label.clone()))?;
        coarse_labels.push(c.clone());
    }
    let mut distinct = coarse_labels.clone();
    distinct.sort();
    distinct.dedup();
    let coarse_of: Vec<usize> = coarse_labels.iter().map(|c| distinct.binary_search(c).unwrap()).collect();
    let mut pi = alloc::vec![f64::NAN; distinct.len()];
    for (s, st) in spec.strata().iter().enumerate() {
        let slot = &mut pi[coarse_of[s]];
        if slot.is_nan() {
            *slot = st.pi_a;
        } else if *slot != st.pi_a {
            return Err(invalid(format!("coarse stratum {:?} mixes propensities", distinct[coarse_of[s]])));
        }
    }

    let draws = draw_population(spec, n, rng);
    let coarse: Vec<usize> = draws.fine.iter().map(|&s| coarse_of[s]).collect();
    let plan = randomize::assign(mechanism, &coarse, &pi, rng)?;
    let outcomes = realize(spec, &draws, &plan.assignments, rng);
    let (ids, labels) = compact(&coarse, &distinct);
    let units = outcomes
        .iter()
        .zip(&plan.assignments)
        .zip(&ids)
        .map(|((&(y, d), &a), &s)| UnitRecord { y, d, a, s })
        .collect();
    let fine_labels: Vec<&str> = draws.fine.iter().map(|&s| spec.strata()[s].label.as_str()).collect();
    Ok(TrialDataset::from_units(units, labels)?.with_aux(&fine_labels)?.with_mechanism(mechanism))
}
