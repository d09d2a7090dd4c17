//! Monte Carlo replication of estimation and inference on simulated trials.
//!
//! A replication is a pure function of the configuration and its index, so
//! replications may run in any order or in parallel; [`summarize`] sorts
//! them by index before reducing.

use alloc::string::String;
use alloc::vec::Vec;

use crate::dgp::{self, DgpSpec};
use crate::error::{Error, Result};
use crate::estimate::{estimate_2s, estimate_sat, estimate_sfe, residuals_sat};
use crate::inference::wald_test;
use crate::randomize::Mechanism;
use crate::rng::child_stream;
use crate::sum::CompensatedSum;
use crate::variance::{variance_2s, variance_sat, variance_sfe};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Estimator {
    Sat,
    Sfe,
    TwoS,
}

impl Estimator {
    pub const ALL: [Estimator; 3] = [Estimator::Sat, Estimator::Sfe, Estimator::TwoS];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::Sat => "sat",
            Estimator::Sfe => "sfe",
            Estimator::TwoS => "2s",
        }
    }
}

impl core::str::FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sat" => Ok(Estimator::Sat),
            "sfe" => Ok(Estimator::Sfe),
            "2s" | "twos" => Ok(Estimator::TwoS),
            other => Err(Error::InvalidArgument(alloc::format!("unknown estimator {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McConfig {
    pub spec: DgpSpec,
    pub n: usize,
    pub reps: u64,
    pub mechanism: Mechanism,
    pub estimators: Vec<Estimator>,
    pub alpha: f64,
    /// Null value of the reported rejection rate; defaults to the true β.
    pub beta0: Option<f64>,
    pub master_seed: u64,
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::InvalidArgument(String::from("reps must be at least 1")));
        }
        if self.n < 2 * self.spec.num_strata() {
            return Err(Error::InvalidArgument(alloc::format!(
                "n = {} is below twice the number of strata ({})",
                self.n,
                self.spec.num_strata()
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument(alloc::format!("alpha = {} outside (0, 1)", self.alpha)));
        }
        if self.estimators.is_empty() {
            return Err(Error::InvalidArgument(String::from("no estimator selected")));
        }
        Ok(())
    }
}

/// Population targets of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub beta: f64,
    pub v_sat: f64,
    pub v_sfe: Option<f64>,
    pub v_2s: Option<f64>,
}

impl Truth {
    /// β and the asymptotic variances under the configured mechanism. The
    /// SFE and 2S variances are omitted when π_A varies across strata.
    pub fn new(config: &McConfig) -> Result<Self> {
        let spec = config.spec.with_tau(config.mechanism.tau())?;
        let s = dgp::population_summary(&spec)?;
        Ok(Self {
            beta: s.beta,
            v_sat: s.v_sat,
            v_sfe: s.constant_pi.then_some(s.v_sfe),
            v_2s: s.constant_pi.then_some(s.v_2s),
        })
    }

    fn avar(&self, e: Estimator) -> Option<f64> {
        match e {
            Estimator::Sat => Some(self.v_sat),
            Estimator::Sfe => self.v_sfe,
            Estimator::TwoS => self.v_2s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Draw {
    pub beta_hat: f64,
    pub v_hat: f64,
    pub covers: bool,
    pub rejects: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Replication {
    pub index: u64,
    /// One entry per configured estimator, in configuration order.
    pub draws: Vec<core::result::Result<Draw, Error>>,
}

/// Runs replication `index`: draws a trial from the stream derived from
/// `(master_seed, index)`, estimates, and tests.
pub fn replicate(config: &McConfig, truth: &Truth, index: u64) -> Replication {
    let mut rng = child_stream(config.master_seed, index);
    let beta0 = config.beta0.unwrap_or(truth.beta);
    let data = dgp::sample(&config.spec, config.n, config.mechanism, &mut rng);
    let draws = config
        .estimators
        .iter()
        .map(|&e| {
            let data = data.as_ref().map_err(Clone::clone)?;
            let fit = estimate_sat(data)?;
            let base = variance_sat(data, &fit, &residuals_sat(data, &fit))?;
            let tau = alloc::vec![config.mechanism.tau(); fit.counts.num_strata()];
            let (beta_hat, v_hat) = match e {
                Estimator::Sat => (fit.beta_hat, base.v_sat_hat),
                Estimator::Sfe => (estimate_sfe(data)?.beta_hat, variance_sfe(data, &fit, &base, &tau)?.v_sfe_hat().unwrap()),
                Estimator::TwoS => (estimate_2s(data)?.beta_hat, variance_2s(data, &fit, &base, &tau)?.v_2s_hat().unwrap()),
            };
            if v_hat == 0.0 {
                // Degenerate interval {β̂}.
                return Ok(Draw { beta_hat, v_hat, covers: beta_hat == truth.beta, rejects: beta_hat != beta0 });
            }
            let n = data.len() as u64;
            let at_truth = wald_test(beta_hat, v_hat, n, truth.beta, config.alpha)?;
            let at_null = wald_test(beta_hat, v_hat, n, beta0, config.alpha)?;
            Ok(Draw { beta_hat, v_hat, covers: !at_truth.reject, rejects: at_null.reject })
        })
        .collect();
    Replication { index, draws }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorSummary {
    pub estimator: Estimator,
    pub avg_est: f64,
    /// Mean of n(β̂ − β)².
    pub avg_se: f64,
    pub avar: Option<f64>,
    pub avg_avar_est: f64,
    pub coverage: f64,
    pub rejection_rate: f64,
    pub successes: u64,
    pub failures: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McSummary {
    pub beta: f64,
    pub beta0: f64,
    pub n: usize,
    pub reps: u64,
    pub mechanism: Mechanism,
    pub alpha: f64,
    pub master_seed: u64,
    pub estimators: Vec<EstimatorSummary>,
}

/// Reduces replications in index order.
pub fn summarize(config: &McConfig, truth: &Truth, reps: &mut [Replication]) -> McSummary {
    reps.sort_by_key(|r| r.index);
    let n = config.n as f64;
    let estimators = config
        .estimators
        .iter()
        .enumerate()
        .map(|(j, &e)| {
            let (mut est, mut se, mut v) = (CompensatedSum::new(), CompensatedSum::new(), CompensatedSum::new());
            let (mut ok, mut covered, mut rejected) = (0u64, 0u64, 0u64);
            for r in reps.iter() {
                if let Ok(d) = &r.draws[j] {
                    ok += 1;
                    est.add(d.beta_hat);
                    let err = d.beta_hat - truth.beta;
                    se.add(n * err * err);
                    v.add(d.v_hat);
                    covered += d.covers as u64;
                    rejected += d.rejects as u64;
                }
            }
            let k = ok as f64;
            let mean = |s: CompensatedSum| if ok == 0 { f64::NAN } else { s.value() / k };
            EstimatorSummary {
                estimator: e,
                avg_est: mean(est),
                avg_se: mean(se),
                avar: truth.avar(e),
                avg_avar_est: mean(v),
                coverage: if ok == 0 { f64::NAN } else { covered as f64 / k },
                rejection_rate: if ok == 0 { f64::NAN } else { rejected as f64 / k },
                successes: ok,
                failures: reps.len() as u64 - ok,
            }
        })
        .collect();
    McSummary {
        beta: truth.beta,
        beta0: config.beta0.unwrap_or(truth.beta),
        n: config.n,
        reps: reps.len() as u64,
        mechanism: config.mechanism,
        alpha: config.alpha,
        master_seed: config.master_seed,
        estimators,
    }
}

/// Runs every replication on the current thread.
pub fn run(config: &McConfig) -> Result<McSummary> {
    config.validate()?;
    let truth = Truth::new(config)?;
    let mut reps: Vec<Replication> = (0..config.reps).map(|r| replicate(config, &truth, r)).collect();
    Ok(summarize(config, &truth, &mut reps))
}
