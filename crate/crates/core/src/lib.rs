//! Fully adaptive momentum-based variance-reduced stochastic optimizers
//! (META-STORM, META-STORM-SG, META-STORM-NA and their per-coordinate EMA
//! variants), the STORM+ / SGD / AdaGrad-Norm / oracle-tuned STORM baselines,
//! a suite of synthetic stochastic problems with known constants, and
//! trace-level diagnostics for the update rules.

pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod numeric;
pub mod optimizers;
pub mod problems;
pub mod schedules;

pub use error::{Error, Result};
pub use optimizers::{run, run_with, Optimizer, RunOptions, RunResult};
pub use numeric::{CompensatedSum, ParamVector, SampleKey};
pub use problems::{Problem, ProblemSpec};
pub use schedules::{Algorithm, HyperParams};
