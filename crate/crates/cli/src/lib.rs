//! IO, reports and commands behind the `car-late` binary.
//!
//! Each command turns its arguments into a serializable report. The same
//! report value renders as a human table (6 significant digits) or as JSON
//! (full precision), so both forms always carry identical numbers.

pub mod commands;
pub mod error;
pub mod format;
pub mod input;
pub mod parallel;

pub use error::{CliError, CliResult};
