//! Experiment runner around the `exitlab` toolkit: configuration handling,
//! the named experiments, and the report/plot writers used by the `exitlab`
//! binary.

pub mod config;
pub mod experiments;
pub mod report;
pub mod svg;
