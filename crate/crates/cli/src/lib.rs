//! Library surface of the benchmark CLI; the `gsbench` binary is a thin
//! wrapper so integration tests can drive the same code paths directly.

pub mod args;
pub mod bench;
pub mod commands;
pub mod config;
pub mod csvio;
