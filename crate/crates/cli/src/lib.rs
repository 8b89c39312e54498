//! Spec-file driven experiments on nonlinear Markov chains.
//!
//! A run reads a [`spec::ChainSpec`], executes one [`run::Command`] and writes
//! a JSON [`report::RunReport`] plus CSV tables into an output directory.

pub mod report;
pub mod run;
pub mod spec;

pub use report::{RunReport, Tables, Verdict, SCHEMA_VERSION};
pub use run::{execute, run, Command, RunError};
pub use spec::{parse_spec, parse_spec_str, ChainSpec, KernelSpec, RunParams, SpecError};

/// Process exit code for operational errors.
pub const EXIT_OPERATIONAL: i32 = 1;
