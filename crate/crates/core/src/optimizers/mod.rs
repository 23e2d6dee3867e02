//! Optimizer state machines: one call to a `step_*` function executes one
//! full iteration with the update order of the corresponding algorithm.

mod baseline;
mod heuristic;
mod run;
mod state;
mod storm;

pub use baseline::{step_baseline, BaselineKind};
pub use heuristic::step_heuristic;
pub use run::{default_trace_every, output_index, run, run_with, Optimizer, RunOptions, RunResult};
pub use state::{
    init, CoordinateRange, Fault, HeuristicState, HeuristicVariant, OptimizerState, State, StepReport,
};
pub use storm::{step_meta_storm, step_meta_storm_na, step_meta_storm_sg, step_stormplus};
