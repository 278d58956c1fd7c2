//! Configuration, file formats, reports and the command-line front end.

mod cli;
pub mod config;
pub mod io;
pub mod report;

pub use cli::{inter_herald_gaps, run};
pub use config::RunConfig;
pub use io::{load_correlation_table, reference_table};
pub use report::{fmt_sig, report_value, Provenance, ReportBundle};
