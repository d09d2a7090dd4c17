use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::process::ExitCode;

use car_late::commands::assign::{self, AssignArgs};
use car_late::commands::design::{self, DesignArgs};
use car_late::commands::estimate::{self, EstimateArgs};
use car_late::commands::simulate::{self, SimulateArgs, SimulateOutcome};
use car_late::commands::{Format, Report};
use car_late::{CliError, CliResult};
use clap::{Parser, Subcommand};

/// LATE estimation, inference and design for stratified randomized trials
/// with imperfect compliance.
#[derive(Debug, Parser)]
#[command(name = "car-late", version)]
struct Cli {
    /// Report format.
    #[arg(long, value_enum, global = true, default_value = "human")]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate the LATE and its standard errors from a trial CSV.
    Estimate(EstimateArgs),
    /// Monte Carlo study on a built-in design or a model file.
    Simulate(SimulateArgs),
    /// Optimal propensities and strata refinement.
    Design(DesignArgs),
    /// Randomize the rows of a CSV into treatment and control.
    Assign(AssignArgs),
}

fn execute(cli: &Cli) -> CliResult<String> {
    match &cli.command {
        Command::Estimate(args) => Ok(estimate::run(args)?.render(cli.format)),
        Command::Simulate(args) => match simulate::run(args)? {
            SimulateOutcome::Report(r) => Ok(r.render(cli.format)),
            SimulateOutcome::Emitted { path, rows } => {
                eprintln!("wrote {rows} rows to {}", path.display());
                Ok(String::new())
            }
        },
        Command::Design(args) => Ok(design::run(args)?.render(cli.format)),
        Command::Assign(args) => {
            match &args.output {
                Some(p) => {
                    let f = File::create(p).map_err(|e| CliError::validation(format!("{}: {e}", p.display())))?;
                    assign::run(args, BufWriter::new(f))?;
                }
                None => {
                    assign::run(args, io::stdout().lock())?;
                }
            }
            Ok(String::new())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli) {
        Ok(text) => {
            let mut out = io::stdout().lock();
            if out.write_all(text.as_bytes()).and_then(|_| out.flush()).is_err() {
                return ExitCode::from(2);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
