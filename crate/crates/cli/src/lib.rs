//! Config-driven scenario runner for deflection-optimal power allocation.
//!
//! The binary is a thin wrapper around these modules; they are exposed as
//! a library so integration tests can parse configs and inspect sweep
//! output programmatically.

pub mod config;
pub mod presets;
pub mod runner;
