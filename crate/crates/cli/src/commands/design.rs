use std::fmt::Write;
use std::path::PathBuf;

use car_late_core::design::{optimal_pi_pilot, optimal_pi_population, refined_strata_variance, DesignOptions, DesignReport};
use car_late_core::dgp;
use car_late_core::{estimate_primitives, estimate_sat, residuals_sat};
use serde::Serialize;

use super::simulate::ModelSource;
use super::Report;
use crate::error::{CliError, CliResult};
use crate::format::{percent, sig, Table};
use crate::input;

#[derive(Debug, Clone, clap::Args)]
pub struct DesignArgs {
    #[command(flatten)]
    pub model: ModelSource,
    /// Pilot trial CSV; the design is then estimated from data.
    #[arg(long, conflicts_with_all = ["design", "spec"])]
    pub csv: Option<PathBuf>,
    /// Column of the pilot CSV holding a finer stratification.
    #[arg(long)]
    pub refine_column: Option<String>,
    /// Tabulate v_sat at constant π = 0.01, 0.02, ..., 0.99.
    #[arg(long)]
    pub pi_grid: bool,
    /// Optimal propensities are clamped to [pi_min, 1 - pi_min].
    #[arg(long, default_value_t = 0.05)]
    pub pi_min: f64,
    /// Replace negative pilot variance estimates by 0.
    #[arg(long)]
    pub clip_variances: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct PropensityRow {
    pub label: String,
    pub pi1: f64,
    pub pi2: f64,
    pub pi_star: f64,
    pub current_pi: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Refinement {
    pub column: String,
    pub fine_strata: usize,
    pub v_sat_coarse: f64,
    pub v_sat_fine: f64,
    pub ess: f64,
    pub max_pi_deviation: f64,
}

/// Population variances of the three estimators under the spec's own τ and
/// under τ = 0.
#[derive(Debug, Clone, Serialize)]
pub struct MechanismComparison {
    pub v_sat: f64,
    pub v_sfe: f64,
    pub v_2s: f64,
    pub v_sfe_tau0: f64,
    pub v_2s_tau0: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DesignOutput {
    pub source: String,
    pub beta: f64,
    pub strata: Vec<PropensityRow>,
    pub pi_star: f64,
    pub v_at_current: f64,
    pub v_at_pi_star_s: f64,
    pub v_at_pi_star: f64,
    pub ess_vector: f64,
    pub ess_constant: f64,
    pub clamped: bool,
    pub nonpositive_pi_terms: bool,
    pub grid: Vec<(f64, f64)>,
    pub mechanism: Option<MechanismComparison>,
    pub refinement: Option<Refinement>,
    pub warnings: Vec<String>,
}

fn from_report(source: String, r: DesignReport) -> DesignOutput {
    let strata = r
        .labels
        .iter()
        .enumerate()
        .map(|(s, l)| PropensityRow {
            label: l.clone(),
            pi1: r.pi1_s[s],
            pi2: r.pi2_s[s],
            pi_star: r.pi_star_s[s],
            current_pi: r.current_pi[s],
        })
        .collect();
    let mut warnings = Vec::new();
    if r.nonpositive_pi_terms {
        warnings.push("some Pi_1(s) or Pi_2(s) is not positive".to_string());
    }
    if r.clamped {
        warnings.push("some optimal propensities hit the pi_min clamp".to_string());
    }
    DesignOutput {
        source,
        beta: r.beta,
        strata,
        pi_star: r.pi_star,
        v_at_current: r.v_at_current,
        v_at_pi_star_s: r.v_at_pi_star_s,
        v_at_pi_star: r.v_at_pi_star,
        ess_vector: r.ess_vector,
        ess_constant: r.ess_constant,
        clamped: r.clamped,
        nonpositive_pi_terms: r.nonpositive_pi_terms,
        grid: r.grid,
        mechanism: None,
        refinement: None,
        warnings,
    }
}

pub fn run(args: &DesignArgs) -> CliResult<DesignOutput> {
    if !(args.pi_min > 0.0 && args.pi_min < 0.5) {
        return Err(CliError::validation(format!("--pi-min {} outside (0, 0.5)", args.pi_min)));
    }
    let opts = DesignOptions {
        pi_min: args.pi_min,
        grid: if args.pi_grid { DesignOptions::percent_grid() } else { Vec::new() },
    };
    if let Some(path) = &args.csv {
        let data = input::read_trial(path, args.refine_column.as_deref())?;
        let fit = estimate_sat(&data)?;
        let prim = estimate_primitives(&data, &fit, &residuals_sat(&data, &fit), args.clip_variances)?;
        let mut out = from_report(path.display().to_string(), optimal_pi_pilot(&data, &fit, &prim, &opts)?);
        if prim.any_negative_variance() {
            out.warnings.push(if prim.clipped {
                "negative pilot variance estimates were set to 0".to_string()
            } else {
                "some pilot variance estimates are negative".to_string()
            });
        }
        if let Some(column) = &args.refine_column {
            let r = refined_strata_variance(&data)?;
            out.refinement = Some(Refinement {
                column: column.clone(),
                fine_strata: r.fine_labels.len(),
                v_sat_coarse: r.coarse.v_sat_hat,
                v_sat_fine: r.fine.v_sat_hat,
                ess: r.ess,
                max_pi_deviation: r.max_pi_deviation,
            });
        }
        return Ok(out);
    }
    if args.refine_column.is_some() {
        return Err(CliError::validation("--refine-column needs a pilot --csv"));
    }
    let spec = args.model.load()?;
    let source = args.model.design.map_or_else(
        || args.model.spec.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
        |k| format!("design {k}"),
    );
    let mut out = from_report(source, optimal_pi_population(&spec, &opts)?);
    if spec.has_uniform_pi() {
        let now = dgp::population_summary(&spec)?;
        let tau0 = dgp::population_summary(&spec.with_tau(0.0)?)?;
        out.mechanism = Some(MechanismComparison {
            v_sat: now.v_sat,
            v_sfe: now.v_sfe,
            v_2s: now.v_2s,
            v_sfe_tau0: tau0.v_sfe,
            v_2s_tau0: tau0.v_2s,
        });
    }
    Ok(out)
}

impl Report for DesignOutput {
    fn human(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{}: beta = {}", self.source, sig(self.beta)).unwrap();
        writeln!(out).unwrap();
        let mut t = Table::new(&["stratum", "Pi_1", "Pi_2", "pi_star", "current_pi"]);
        for s in &self.strata {
            t.row(vec![s.label.clone(), sig(s.pi1), sig(s.pi2), sig(s.pi_star), sig(s.current_pi)]);
        }
        out.push_str(&t.render());
        writeln!(out).unwrap();
        writeln!(out, "constant pi_star = {}", sig(self.pi_star)).unwrap();
        writeln!(out, "v_sat at current pi = {}", sig(self.v_at_current)).unwrap();
        writeln!(out, "v_sat at pi_star(s) = {}  (effective sample gain {})", sig(self.v_at_pi_star_s), percent(self.ess_vector))
            .unwrap();
        writeln!(out, "v_sat at constant pi_star = {}  (effective sample gain {})", sig(self.v_at_pi_star), percent(self.ess_constant))
            .unwrap();
        if let Some(m) = &self.mechanism {
            writeln!(
                out,
                "current tau: v_sat = {}, v_sfe = {}, v_2s = {}; with tau = 0 (e.g. sbr) v_sfe = {}, v_2s = {}, so all three reach v_sat",
                sig(m.v_sat),
                sig(m.v_sfe),
                sig(m.v_2s),
                sig(m.v_sfe_tau0),
                sig(m.v_2s_tau0)
            )
            .unwrap();
        }
        if let Some(r) = &self.refinement {
            writeln!(
                out,
                "stratifying by {} ({} strata): v_sat {} -> {}  (effective sample gain {}, max treated-share deviation {})",
                r.column,
                r.fine_strata,
                sig(r.v_sat_coarse),
                sig(r.v_sat_fine),
                percent(r.ess),
                sig(r.max_pi_deviation)
            )
            .unwrap();
        }
        if !self.grid.is_empty() {
            writeln!(out).unwrap();
            let mut t = Table::new(&["pi", "v_sat"]);
            for (p, v) in &self.grid {
                t.row(vec![sig(*p), sig(*v)]);
            }
            out.push_str(&t.render());
        }
        for w in &self.warnings {
            writeln!(out, "warning: {w}").unwrap();
        }
        out
    }
}
