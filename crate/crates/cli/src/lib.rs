//! Library surface of the command-line workbench: configuration parsing and
//! scenario orchestration, reused by the binary and by the acceptance suite.

pub mod config;
pub mod scenario;
