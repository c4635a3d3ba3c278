//! Config loading, run orchestration and file output for the `gradqvi`
//! binary.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod output;
