//! Command-line front end: channel-spec files, capacity runs,
//! simulation runs, and sweeps with machine-readable reports.

pub mod commands;
pub mod specfile;

pub use commands::{run, CliError, RunReport, SCHEMA_VERSION};
pub use specfile::ChannelSpecFile;
