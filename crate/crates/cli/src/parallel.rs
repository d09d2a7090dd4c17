//! Monte Carlo replications on a rayon pool.

use car_late_core::montecarlo::{replicate, summarize, McConfig, McSummary, Replication, Truth};
use rayon::prelude::*;

use crate::error::{CliError, CliResult};

/// Runs `config` on `threads` workers (rayon's default when `None`). Each
/// replication draws from its own seed-derived stream and the reduction
/// sorts by index, so the summary does not depend on the thread count.
pub fn run(config: &McConfig, threads: Option<usize>) -> CliResult<McSummary> {
    config.validate()?;
    let truth = Truth::new(config)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        if t == 0 {
            return Err(CliError::validation("--threads must be at least 1"));
        }
        builder = builder.num_threads(t);
    }
    let pool = builder.build().map_err(|e| CliError::validation(e.to_string()))?;
    let mut reps: Vec<Replication> =
        pool.install(|| (0..config.reps).into_par_iter().map(|r| replicate(config, &truth, r)).collect());
    Ok(summarize(config, &truth, &mut reps))
}
