//! Configuration parsing and orchestration behind the `se` binary.

pub mod config;
pub mod run;
