//! Library half of the `fusenas` binary: run configuration and the
//! file-format code (run log, front CSV, DOT graphs), kept importable
//! so tests can parse what the binary writes.

pub mod config;
pub mod exports;
