//! Command-line front end: scenario simulation, JSON Lines pattern files,
//! versioned model files, and the train / classify / detect / cluster / eval
//! pipelines.

pub mod args;
pub mod commands;
pub mod error;
pub mod io;
pub mod report;
pub mod scenario;

pub use commands::run;
pub use error::{CliError, CliResult};
