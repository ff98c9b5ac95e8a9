//! File formats, reports, experiment drivers and the command-line front end
//! built on `ssldro-core`.

pub mod cli;
pub mod csv_io;
pub mod error;
pub mod experiment;
pub mod model_file;
pub mod report;

pub use error::{CliError, CliResult};
