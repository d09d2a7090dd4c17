//! Covariate-adaptive treatment assignment: simple random sampling (SRS)
//! and stratified block randomization (SBR).

use alloc::string::ToString;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

/// Assignment mechanism.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mechanism {
    /// Independent Bernoulli(π(s)) draws.
    Srs,
    /// Exactly ⌊n(s)π(s)⌋ treated per stratum, uniformly over subsets.
    Sbr,
}

impl Mechanism {
    /// Dispersion parameter τ(s) implied by the mechanism.
    pub fn tau(self) -> f64 {
        match self {
            Mechanism::Srs => 1.0,
            Mechanism::Sbr => 0.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Mechanism::Srs => "srs",
            Mechanism::Sbr => "sbr",
        }
    }
}

impl core::str::FromStr for Mechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "srs" => Ok(Mechanism::Srs),
            "sbr" => Ok(Mechanism::Sbr),
            other => Err(Error::InvalidArgument(alloc::format!("unknown mechanism {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentPlan {
    pub assignments: Vec<bool>,
    pub mechanism: Mechanism,
    /// Target π_A(s), indexed by stratum id.
    pub pi: Vec<f64>,
}

fn check_pi(pi: &[f64]) -> Result<()> {
    for (s, &p) in pi.iter().enumerate() {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidPropensity { stratum: s.to_string(), value: p });
        }
    }
    Ok(())
}

fn check_ids(strata: &[usize], k: usize) -> Result<()> {
    if strata.iter().any(|&s| s >= k) {
        return Err(Error::InvalidArgument("stratum id without a propensity".to_string()));
    }
    Ok(())
}

/// ⌊n π⌋, reading π as the decimal the caller wrote: products within
/// rounding error of an integer (0.29 × 100 = 28.999…) snap to it.
pub fn treated_count(n: usize, pi: f64) -> usize {
    let x = n as f64 * pi;
    let r = libm::round(x);
    if libm::fabs(x - r) <= 1e-9 * r.max(1.0) {
        r as usize
    } else {
        libm::floor(x) as usize
    }
}

/// Treats each unit independently with probability `pi[strata[i]]`.
pub fn assign_srs<R: Rng + ?Sized>(strata: &[usize], pi: &[f64], rng: &mut R) -> Result<AssignmentPlan> {
    check_pi(pi)?;
    check_ids(strata, pi.len())?;
    let assignments = strata.iter().map(|&s| rng.random::<f64>() < pi[s]).collect();
    Ok(AssignmentPlan { assignments, mechanism: Mechanism::Srs, pi: pi.to_vec() })
}

/// Within every stratum, shuffles the members (Fisher–Yates) and treats
/// the first ⌊n(s)π(s)⌋. Strata are processed in id order.
pub fn assign_sbr<R: Rng + ?Sized>(strata: &[usize], pi: &[f64], rng: &mut R) -> Result<AssignmentPlan> {
    check_pi(pi)?;
    check_ids(strata, pi.len())?;
    let mut members: Vec<Vec<usize>> = alloc::vec![Vec::new(); pi.len()];
    for (i, &s) in strata.iter().enumerate() {
        members[s].push(i);
    }
    let mut assignments = alloc::vec![false; strata.len()];
    for (s, idx) in members.iter_mut().enumerate() {
        if idx.is_empty() {
            continue;
        }
        idx.shuffle(rng);
        for &i in &idx[..treated_count(idx.len(), pi[s])] {
            assignments[i] = true;
        }
    }
    Ok(AssignmentPlan { assignments, mechanism: Mechanism::Sbr, pi: pi.to_vec() })
}

pub fn assign<R: Rng + ?Sized>(mechanism: Mechanism, strata: &[usize], pi: &[f64], rng: &mut R) -> Result<AssignmentPlan> {
    match mechanism {
        Mechanism::Srs => assign_srs(strata, pi, rng),
        Mechanism::Sbr => assign_sbr(strata, pi, rng),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use alloc::vec;

    #[test]
    fn floor_rule() {
        assert_eq!(treated_count(4, 0.5), 2);
        assert_eq!(treated_count(5, 0.5), 2);
        assert_eq!(treated_count(100, 0.29), 29);
        assert_eq!(treated_count(10, 0.7), 7);
        assert_eq!(treated_count(3, 0.3), 0);
    }

    #[test]
    fn sbr_exact_counts() {
        let strata = vec![0usize; 4];
        let plan = assign_sbr(&strata, &[0.5], &mut stream(1)).unwrap();
        assert_eq!(plan.assignments.iter().filter(|a| **a).count(), 2);
        let strata = vec![0usize; 5];
        let plan = assign_sbr(&strata, &[0.5], &mut stream(1)).unwrap();
        assert_eq!(plan.assignments.iter().filter(|a| **a).count(), 2);
    }

    #[test]
    fn rejects_boundary_propensity() {
        let err = assign_srs(&[0], &[1.0], &mut stream(0)).unwrap_err();
        assert!(matches!(err, Error::InvalidPropensity { value, .. } if value == 1.0));
        assert!(assign_sbr(&[0], &[0.0], &mut stream(0)).is_err());
        assert!(assign_srs(&[1], &[0.5], &mut stream(0)).is_err());
    }

    #[test]
    fn srs_fraction_concentrates() {
        let strata = vec![0usize; 10_000];
        let plan = assign_srs(&strata, &[0.5], &mut stream(9)).unwrap();
        let frac = plan.assignments.iter().filter(|a| **a).count() as f64 / 10_000.0;
        // 4 standard deviations of a Binomial(10000, 0.5) share is 0.02.
        assert!((frac - 0.5).abs() < 0.02, "{frac}");
    }

    #[test]
    fn fixed_seed_reproduces() {
        let strata: Vec<usize> = (0..50).map(|i| i % 2).collect();
        for mech in [Mechanism::Srs, Mechanism::Sbr] {
            let a = assign(mech, &strata, &[0.3, 0.6], &mut stream(77)).unwrap();
            let b = assign(mech, &strata, &[0.3, 0.6], &mut stream(77)).unwrap();
            assert_eq!(a, b);
        }
    }
}
