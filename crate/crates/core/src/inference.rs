//! Two-sided Wald tests and confidence intervals for the LATE.

use crate::error::{Error, Result};

const SQRT_2: f64 = core::f64::consts::SQRT_2;

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

fn norm_pdf(x: f64) -> f64 {
    libm::exp(-0.5 * x * x) / libm::sqrt(2.0 * core::f64::consts::PI)
}

/// Standard normal quantile: Acklam's rational approximation (relative
/// error below 1.2e-9) polished by one Halley step against `norm_cdf`.
pub fn norm_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const LOW: f64 = 0.02425;
    let x = if p < LOW {
        let q = libm::sqrt(-2.0 * libm::log(p));
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = libm::sqrt(-2.0 * libm::log1p(-p));
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let e = norm_cdf(x) - p;
    let u = e / norm_pdf(x);
    x - u / (1.0 + x * u / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestResult {
    pub beta0: f64,
    pub stat: f64,
    pub z_crit: f64,
    pub p_value: f64,
    pub reject: bool,
    pub se: f64,
    pub ci: (f64, f64),
}

impl TestResult {
    pub fn covers(&self, beta: f64) -> bool {
        self.ci.0 <= beta && beta <= self.ci.1
    }
}

/// Tests H0: β = `beta0` at level `alpha` given an estimate, its
/// asymptotic variance `v_hat` (n·Var scale) and the sample size.
pub fn wald_test(beta_hat: f64, v_hat: f64, n: u64, beta0: f64, alpha: f64) -> Result<TestResult> {
    if !(v_hat > 0.0) {
        return Err(Error::ZeroVariance(v_hat));
    }
    if n == 0 {
        return Err(Error::InvalidArgument(alloc::string::ToString::to_string("sample size must be positive")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(alloc::format!("alpha = {alpha} outside (0, 1)")));
    }
    let se = libm::sqrt(v_hat / n as f64);
    let z_crit = norm_quantile(1.0 - alpha / 2.0);
    let stat = libm::fabs(beta_hat - beta0) / se;
    let p_value = libm::erfc(stat / SQRT_2).clamp(0.0, 1.0);
    let half = z_crit * se;
    Ok(TestResult {
        beta0,
        stat,
        z_crit,
        p_value,
        reject: stat > z_crit,
        se,
        ci: (beta_hat - half, beta_hat + half),
    })
}
