//! Command-line and HTTP front ends for `cqr-core`.

pub mod cli;
pub mod service;
