//! Batch-experiment plumbing for the qubit-metamaterial simulator:
//! schema-checked TOML configuration, provenance-stamped result tables, and
//! the experiment runners. The `qmeta` binary is a thin argument-parsing
//! shell over this crate; integration tests drive the runners directly.

pub mod config;
pub mod error;
pub mod runner;
pub mod table;
