//! Command-line driver and HTTP service around the `ca3d` library.

pub mod cli;
pub mod service;
