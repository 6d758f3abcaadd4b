//! File formats, reports and the command-line front end for
//! `safeload-core`.

pub mod bundle;
pub mod cli;
pub mod config;
pub mod latency;
pub mod report;
pub mod traceio;

pub use bundle::{load_bundle, save_bundle, BundleError};
pub use traceio::{read_trace, write_trace, TraceError};
