use std::fmt::Write;
use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use car_late_core::dgp::{self, DgpSpec};
use car_late_core::montecarlo::{Estimator, McConfig, McSummary};
use car_late_core::rng::child_stream;
use car_late_core::Mechanism;
use serde::Serialize;

use super::{parse_mechanism, Report};
use crate::error::{CliError, CliResult};
use crate::format::{sig, sig_opt, Table};
use crate::input::{self, SpecFile};
use crate::parallel;

#[derive(Debug, Clone, clap::Args)]
pub struct ModelSource {
    /// Built-in design 1 to 4.
    #[arg(long, conflicts_with = "spec")]
    pub design: Option<u32>,
    /// TOML model file.
    #[arg(long)]
    pub spec: Option<PathBuf>,
}

impl ModelSource {
    pub fn load(&self) -> CliResult<DgpSpec> {
        match (&self.design, &self.spec) {
            (Some(k), _) => Ok(dgp::builtin_design(*k)?),
            (None, Some(p)) => SpecFile::load(p)?.to_spec(),
            (None, None) => Err(CliError::validation("give --design or --spec")),
        }
    }
}

fn parse_estimator(s: &str) -> Result<Estimator, String> {
    s.trim().parse().map_err(|e: car_late_core::Error| e.to_string())
}

#[derive(Debug, Clone, clap::Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelSource,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 1000)]
    pub reps: u64,
    #[arg(long, value_parser = parse_mechanism, default_value = "sbr")]
    pub mechanism: Mechanism,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Comma-separated subset of sat, sfe, 2s.
    #[arg(long, value_parser = parse_estimator, value_delimiter = ',', default_value = "sat,sfe,2s")]
    pub estimators: Vec<Estimator>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Null value for the rejection rate; defaults to the true β.
    #[arg(long)]
    pub beta0: Option<f64>,
    /// Worker threads; results do not depend on this.
    #[arg(long, env = "CAR_LATE_THREADS")]
    pub threads: Option<usize>,
    /// Write the trial of replication 0 to this CSV and skip the simulation.
    #[arg(long)]
    pub emit_data: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PopulationRow {
    pub beta: f64,
    pub v_sat: f64,
    pub v_sfe: f64,
    pub v_2s: f64,
    pub plim_sfe: f64,
    pub plim_2s: f64,
    pub constant_pi: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimatorRow {
    pub estimator: &'static str,
    pub avg_est: f64,
    pub avg_se: f64,
    pub avar: Option<f64>,
    pub avg_avar_est: f64,
    pub coverage: f64,
    pub rejection_rate: f64,
    pub successes: u64,
    pub failures: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulateReport {
    pub design: Option<u32>,
    pub mechanism: &'static str,
    pub n: usize,
    pub reps: u64,
    pub seed: u64,
    pub alpha: f64,
    pub beta0: f64,
    pub population: PopulationRow,
    pub estimators: Vec<EstimatorRow>,
}

impl SimulateReport {
    pub fn new(design: Option<u32>, spec: &DgpSpec, s: &McSummary) -> CliResult<Self> {
        let pop = dgp::population_summary(&spec.with_tau(s.mechanism.tau())?)?;
        Ok(Self {
            design,
            mechanism: s.mechanism.name(),
            n: s.n,
            reps: s.reps,
            seed: s.master_seed,
            alpha: s.alpha,
            beta0: s.beta0,
            population: PopulationRow {
                beta: pop.beta,
                v_sat: pop.v_sat,
                v_sfe: pop.v_sfe,
                v_2s: pop.v_2s,
                plim_sfe: pop.plim_sfe,
                plim_2s: pop.plim_2s,
                constant_pi: pop.constant_pi,
            },
            estimators: s
                .estimators
                .iter()
                .map(|e| EstimatorRow {
                    estimator: e.estimator.name(),
                    avg_est: e.avg_est,
                    avg_se: e.avg_se,
                    avar: e.avar,
                    avg_avar_est: e.avg_avar_est,
                    coverage: e.coverage,
                    rejection_rate: e.rejection_rate,
                    successes: e.successes,
                    failures: e.failures,
                })
                .collect(),
        })
    }
}

pub enum SimulateOutcome {
    Report(Box<SimulateReport>),
    Emitted { path: PathBuf, rows: usize },
}

pub fn config(args: &SimulateArgs, spec: DgpSpec) -> McConfig {
    McConfig {
        spec,
        n: args.n,
        reps: args.reps,
        mechanism: args.mechanism,
        estimators: args.estimators.clone(),
        alpha: args.alpha,
        beta0: args.beta0,
        master_seed: args.seed,
    }
}

pub fn run(args: &SimulateArgs) -> CliResult<SimulateOutcome> {
    let spec = args.model.load()?;
    let config = config(args, spec);
    if let Some(path) = &args.emit_data {
        if config.n == 0 {
            return Err(CliError::validation("--n must be positive"));
        }
        let data = dgp::sample(&config.spec, config.n, config.mechanism, &mut child_stream(config.master_seed, 0))?;
        let file = File::create(path).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
        input::write_trial(&data, BufWriter::new(file))?;
        return Ok(SimulateOutcome::Emitted { path: path.clone(), rows: data.len() });
    }
    let summary = parallel::run(&config, args.threads)?;
    Ok(SimulateOutcome::Report(Box::new(SimulateReport::new(args.model.design, &config.spec, &summary)?)))
}

impl Report for SimulateReport {
    fn human(&self) -> String {
        let mut out = String::new();
        let source = self.design.map_or_else(|| "spec file".to_string(), |k| format!("design {k}"));
        writeln!(
            out,
            "{source}, mechanism {}, n = {}, reps = {}, seed = {}, alpha = {}",
            self.mechanism, self.n, self.reps, self.seed, self.alpha
        )
        .unwrap();
        let p = &self.population;
        writeln!(
            out,
            "beta = {}, beta0 = {}, plim_sfe = {}, plim_2s = {}, constant pi = {}",
            sig(p.beta),
            sig(self.beta0),
            sig(p.plim_sfe),
            sig(p.plim_2s),
            p.constant_pi
        )
        .unwrap();
        writeln!(out).unwrap();
        let mut t = Table::new(&["estimator", "avg_est", "avg_se", "avar", "avg_avar_est", "coverage", "rejection", "failures"]);
        for e in &self.estimators {
            t.row(vec![
                e.estimator.to_string(),
                sig(e.avg_est),
                sig(e.avg_se),
                sig_opt(e.avar),
                sig(e.avg_avar_est),
                sig(e.coverage),
                sig(e.rejection_rate),
                e.failures.to_string(),
            ]);
        }
        out.push_str(&t.render());
        out
    }
}
