use std::fmt::Write;
use std::path::PathBuf;

use car_late_core::montecarlo::Estimator;
use car_late_core::{
    estimate_2s, estimate_primitives, estimate_sat, estimate_sfe, residuals_sat, variance_2s, variance_sat, variance_sfe,
    wald_test, TrialDataset,
};
use serde::Serialize;

use super::Report;
use crate::error::{CliError, CliResult};
use crate::format::{sig, sig_opt, Table};
use crate::input;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Which {
    Sat,
    Sfe,
    #[value(name = "2s")]
    TwoS,
    All,
}

impl Which {
    fn estimators(self) -> Vec<Estimator> {
        match self {
            Which::Sat => vec![Estimator::Sat],
            Which::Sfe => vec![Estimator::Sfe],
            Which::TwoS => vec![Estimator::TwoS],
            Which::All => Estimator::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, clap::Args)]
pub struct EstimateArgs {
    /// Trial CSV with columns y, d, a, s.
    pub csv: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    pub estimator: Which,
    /// τ applied to every stratum in the SFE and 2S variances.
    #[arg(long, default_value_t = 1.0, conflicts_with = "tau_file")]
    pub tau: f64,
    /// CSV with columns s, tau.
    #[arg(long)]
    pub tau_file: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.0)]
    pub beta0: f64,
    /// Also report the primitive-parameter estimates.
    #[arg(long)]
    pub primitives: bool,
    /// Replace negative primitive variance estimates by 0.
    #[arg(long)]
    pub clip_variances: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateRow {
    pub estimator: &'static str,
    pub beta_hat: f64,
    pub v_hat: f64,
    pub se: f64,
    pub beta0: f64,
    /// `None` when the standard error is 0.
    pub stat: Option<f64>,
    pub p_value: f64,
    pub reject: bool,
    pub ci_lower: f64,
    pub ci_upper: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StratumRow {
    pub label: String,
    pub n: u64,
    pub n_a: u64,
    pub take_up_treated: f64,
    pub take_up_control: f64,
    pub beta_hat: f64,
    pub gamma_hat: f64,
    pub p_hat_c: f64,
    pub share_of_compliers: f64,
    pub tau: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct VarianceRow {
    pub v1_hat: f64,
    pub v0_hat: f64,
    pub vh_hat: f64,
    pub va_sfe_hat: Option<f64>,
    pub va_2s_hat: Option<f64>,
    pub max_pi_deviation: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PrimitiveRow {
    pub label: String,
    pub p_hat: f64,
    pub pi_a_hat: f64,
    pub pi_d1_hat: f64,
    pub pi_d0_hat: f64,
    pub m1c_hat: f64,
    pub m0c_hat: f64,
    pub m1at_hat: Option<f64>,
    pub m0nt_hat: Option<f64>,
    pub v1c_hat: f64,
    pub v0c_hat: f64,
    pub v1at_hat: Option<f64>,
    pub v0nt_hat: Option<f64>,
    pub negative_variance: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateReport {
    pub n: usize,
    pub strata: usize,
    pub alpha: f64,
    pub p_hat_c: f64,
    pub estimates: Vec<EstimateRow>,
    pub variance: VarianceRow,
    pub per_stratum: Vec<StratumRow>,
    pub primitives: Option<Vec<PrimitiveRow>>,
    pub warnings: Vec<String>,
}

fn row(estimator: Estimator, beta_hat: f64, v_hat: f64, n: usize, beta0: f64, alpha: f64) -> CliResult<EstimateRow> {
    let name = estimator.name();
    if v_hat == 0.0 {
        // Degenerate interval {β̂}.
        let same = beta_hat == beta0;
        return Ok(EstimateRow {
            estimator: name,
            beta_hat,
            v_hat,
            se: 0.0,
            beta0,
            stat: None,
            p_value: if same { 1.0 } else { 0.0 },
            reject: !same,
            ci_lower: beta_hat,
            ci_upper: beta_hat,
        });
    }
    let t = wald_test(beta_hat, v_hat, n as u64, beta0, alpha)?;
    Ok(EstimateRow {
        estimator: name,
        beta_hat,
        v_hat,
        se: t.se,
        beta0,
        stat: Some(t.stat),
        p_value: t.p_value,
        reject: t.reject,
        ci_lower: t.ci.0,
        ci_upper: t.ci.1,
    })
}

pub fn estimate(data: &TrialDataset, args: &EstimateArgs, tau: &[f64]) -> CliResult<EstimateReport> {
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        return Err(CliError::validation(format!("--alpha {} outside (0, 1)", args.alpha)));
    }
    let fit = estimate_sat(data)?;
    let resid = residuals_sat(data, &fit);
    let mut v = variance_sat(data, &fit, &resid)?;
    let wanted = args.estimator.estimators();
    let mut estimates = Vec::new();
    let mut warnings = Vec::new();
    for &e in &wanted {
        let (beta_hat, v_hat) = match e {
            Estimator::Sat => (fit.beta_hat, v.v_sat_hat),
            Estimator::Sfe => {
                v = variance_sfe(data, &fit, &v, tau)?;
                (estimate_sfe(data)?.beta_hat, v.v_sfe_hat().unwrap())
            }
            Estimator::TwoS => {
                v = variance_2s(data, &fit, &v, tau)?;
                (estimate_2s(data)?.beta_hat, v.v_2s_hat().unwrap())
            }
        };
        estimates.push(row(e, beta_hat, v_hat, data.len(), args.beta0, args.alpha)?);
    }
    if wanted.iter().any(|&e| e != Estimator::Sat) && v.max_pi_deviation > 0.05 {
        warnings.push(format!(
            "treated shares differ across strata by up to {}; the SFE and 2S variances assume a common propensity",
            sig(v.max_pi_deviation)
        ));
    }

    let per_stratum = fit
        .counts
        .per_stratum
        .iter()
        .enumerate()
        .map(|(s, c)| StratumRow {
            label: data.stratum_label(s).to_string(),
            n: c.n,
            n_a: c.n_a,
            take_up_treated: c.take_up_treated(),
            take_up_control: c.take_up_control(),
            beta_hat: fit.beta_hat_s[s],
            gamma_hat: fit.gamma_hat_s[s],
            p_hat_c: fit.p_hat_sc[s],
            share_of_compliers: fit.p_hat_s_given_c[s],
            tau: tau[s],
        })
        .collect();

    let primitives = if args.primitives {
        let p = estimate_primitives(data, &fit, &resid, args.clip_variances)?;
        if p.any_negative_variance() {
            warnings.push(if p.clipped {
                "negative primitive variance estimates were set to 0".to_string()
            } else {
                "some primitive variance estimates are negative".to_string()
            });
        }
        Some(
            p.strata
                .iter()
                .enumerate()
                .map(|(s, x)| PrimitiveRow {
                    label: data.stratum_label(s).to_string(),
                    p_hat: x.p_hat,
                    pi_a_hat: x.pi_a_hat,
                    pi_d1_hat: x.pi_d1_hat,
                    pi_d0_hat: x.pi_d0_hat,
                    m1c_hat: x.m1c_hat,
                    m0c_hat: x.m0c_hat,
                    m1at_hat: x.m1at_hat,
                    m0nt_hat: x.m0nt_hat,
                    v1c_hat: x.v1c_hat,
                    v0c_hat: x.v0c_hat,
                    v1at_hat: x.v1at_hat,
                    v0nt_hat: x.v0nt_hat,
                    negative_variance: x.negative_variance,
                })
                .collect(),
        )
    } else {
        None
    };

    Ok(EstimateReport {
        n: data.len(),
        strata: data.num_strata(),
        alpha: args.alpha,
        p_hat_c: fit.p_hat_c,
        estimates,
        variance: VarianceRow {
            v1_hat: v.v1_hat,
            v0_hat: v.v0_hat,
            vh_hat: v.vh_hat,
            va_sfe_hat: v.va_sfe_hat,
            va_2s_hat: v.va_2s_hat,
            max_pi_deviation: v.max_pi_deviation,
        },
        per_stratum,
        primitives,
        warnings,
    })
}

pub fn run(args: &EstimateArgs) -> CliResult<EstimateReport> {
    let data = input::read_trial(&args.csv, None)?;
    let tau = match &args.tau_file {
        Some(p) => input::read_tau_file(p, &data)?,
        None => vec![args.tau; data.num_strata()],
    };
    estimate(&data, args, &tau)
}

impl Report for EstimateReport {
    fn human(&self) -> String {
        let mut out = String::new();
        writeln!(out, "n = {}, strata = {}, P(C) = {}, alpha = {}", self.n, self.strata, sig(self.p_hat_c), self.alpha).unwrap();
        writeln!(out).unwrap();
        let mut t = Table::new(&["estimator", "beta_hat", "se", "v_hat", "beta0", "stat", "p_value", "reject", "ci_lower", "ci_upper"]);
        for e in &self.estimates {
            t.row(vec![
                e.estimator.to_string(),
                sig(e.beta_hat),
                sig(e.se),
                sig(e.v_hat),
                sig(e.beta0),
                sig_opt(e.stat),
                sig(e.p_value),
                e.reject.to_string(),
                sig(e.ci_lower),
                sig(e.ci_upper),
            ]);
        }
        out.push_str(&t.render());
        writeln!(out).unwrap();
        let v = &self.variance;
        writeln!(
            out,
            "V1 = {}, V0 = {}, VH = {}, VA_sfe = {}, VA_2s = {}, max treated-share deviation = {}",
            sig(v.v1_hat),
            sig(v.v0_hat),
            sig(v.vh_hat),
            sig_opt(v.va_sfe_hat),
            sig_opt(v.va_2s_hat),
            sig(v.max_pi_deviation)
        )
        .unwrap();
        writeln!(out).unwrap();
        let mut t = Table::new(&["stratum", "n", "n_a", "take_up_1", "take_up_0", "beta_hat", "gamma_hat", "P(C,s)", "P(s|C)", "tau"]);
        for s in &self.per_stratum {
            t.row(vec![
                s.label.clone(),
                s.n.to_string(),
                s.n_a.to_string(),
                sig(s.take_up_treated),
                sig(s.take_up_control),
                sig(s.beta_hat),
                sig(s.gamma_hat),
                sig(s.p_hat_c),
                sig(s.share_of_compliers),
                sig(s.tau),
            ]);
        }
        out.push_str(&t.render());
        if let Some(prims) = &self.primitives {
            writeln!(out).unwrap();
            let mut t = Table::new(&[
                "stratum", "p", "pi_a", "pi_d1", "pi_d0", "m1c", "m0c", "m1at", "m0nt", "v1c", "v0c", "v1at", "v0nt",
            ]);
            for p in prims {
                t.row(vec![
                    p.label.clone(),
                    sig(p.p_hat),
                    sig(p.pi_a_hat),
                    sig(p.pi_d1_hat),
                    sig(p.pi_d0_hat),
                    sig(p.m1c_hat),
                    sig(p.m0c_hat),
                    sig_opt(p.m1at_hat),
                    sig_opt(p.m0nt_hat),
                    sig(p.v1c_hat),
                    sig(p.v0c_hat),
                    sig_opt(p.v1at_hat),
                    sig_opt(p.v0nt_hat),
                ]);
            }
            out.push_str(&t.render());
        }
        for w in &self.warnings {
            writeln!(out, "warning: {w}").unwrap();
        }
        out
    }
}
