use std::io::Write;
use std::path::PathBuf;

use car_late_core::randomize::assign;
use car_late_core::rng::stream;
use car_late_core::Mechanism;

use super::parse_mechanism;
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, clap::Args)]
pub struct AssignArgs {
    /// CSV with a stratum column `s`; other columns are copied through.
    pub csv: PathBuf,
    #[arg(long, value_parser = parse_mechanism, default_value = "sbr")]
    pub mechanism: Mechanism,
    #[arg(long, default_value_t = 0.5)]
    pub pi: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output path; standard output when absent.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

/// Appends an assignment column `a` to the rows of `args.csv`.
pub fn run<W: Write>(args: &AssignArgs, out: W) -> CliResult<usize> {
    let file = std::fs::File::open(&args.csv).map_err(|e| CliError::validation(format!("{}: {e}", args.csv.display())))?;
    let mut rdr = csv::Reader::from_reader(file);
    let headers = rdr.headers()?.clone();
    if headers.iter().any(|h| h.trim() == "a") {
        return Err(CliError::validation(format!("{}: column \"a\" already present", args.csv.display())));
    }
    let is = headers
        .iter()
        .position(|h| h.trim() == "s")
        .ok_or_else(|| CliError::validation(format!("{}: missing column \"s\"", args.csv.display())))?;
    let records = rdr.records().collect::<Result<Vec<_>, _>>()?;
    let labels: Vec<&str> = records.iter().map(|r| r.get(is).unwrap_or("").trim()).collect();
    let mut distinct = labels.clone();
    distinct.sort_unstable();
    distinct.dedup();
    let ids: Vec<usize> = labels.iter().map(|l| distinct.binary_search(l).unwrap()).collect();
    let plan = assign(args.mechanism, &ids, &vec![args.pi; distinct.len()], &mut stream(args.seed)).map_err(|e| match e {
        car_late_core::Error::InvalidPropensity { value, .. } => {
            CliError::validation(format!("--pi {value} outside (0, 1)"))
        }
        other => other.into(),
    })?;

    let mut w = csv::Writer::from_writer(out);
    let mut header = headers.clone();
    header.push_field("a");
    w.write_record(&header)?;
    for (rec, &a) in records.iter().zip(&plan.assignments) {
        let mut rec = rec.clone();
        rec.push_field(if a { "1" } else { "0" });
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(records.len())
}
