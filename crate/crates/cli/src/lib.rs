//! Command-line front end for the scalar-field dynamics library:
//! configuration loading, run orchestration, and report emission.

pub mod config;
pub mod orchestrate;
pub mod report;
