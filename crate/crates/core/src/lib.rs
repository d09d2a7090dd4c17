//! Estimation and inference for the local average treatment effect in
//! randomized trials with covariate-adaptive randomization and imperfect
//! compliance.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, the command line
//! and the parallel simulation driver live in the `car-late` crate.
#![no_std]
extern crate alloc;

pub mod data;
pub mod design;
pub mod dgp;
pub mod error;
pub mod estimate;
pub mod inference;
pub mod montecarlo;
pub mod primitives;
pub mod randomize;
pub mod rng;
pub mod sum;
pub mod variance;

pub use data::{count, CellCounts, StratumCounts, TrialDataset, UnitRecord};
pub use design::{optimal_pi_pilot, optimal_pi_population, refined_strata_variance, DesignOptions, DesignReport};
pub use dgp::{builtin_design, population_summary, DgpSpec, PopulationSummary, StratumSpec};
pub use error::{Error, Result};
pub use estimate::{estimate_2s, estimate_sat, estimate_sfe, residuals_sat, SatFit, SfeFit, TwoSFit};
pub use inference::{wald_test, TestResult};
pub use montecarlo::{Estimator, McConfig, McSummary};
pub use primitives::{estimate_primitives, PrimitiveEstimates};
pub use randomize::{AssignmentPlan, Mechanism};
pub use variance::{variance_2s, variance_sat, variance_sfe, VarianceBreakdown};
