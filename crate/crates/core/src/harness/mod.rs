//! Experiment driver behind the `metastorm` command: configs, seeded run
//! matrices with CSV traces and JSON summaries, convergence sweeps and the
//! built-in verification suite.

mod config;
mod execute;
mod summarize;
mod sweep;
mod verify;

pub use config::{parse_config, parse_config_str, RunConfig, DEFAULT_OUTPUT, DEFAULT_T};
pub use execute::{
    execute, select_best_eta, trace_csv, trace_file_name, write_atomic, EtaSummary, ExecOptions, MetricStats,
    ProblemInfo, RunRecord, RunSummary, SUMMARY_FILE, TRACE_HEADER,
};
pub use summarize::{summarize, Summarized};
pub use sweep::{check_horizons, sweep_convergence, sweep_seed, sweep_to_dir, SweepCurve, SweepPoint, SweepReport, SWEEP_FILE};
pub use verify::{
    adagrad_equivalence, ulp_distance, verify, verify_hyper, verify_problems, Check, Equivalence, VerifyFault,
    VerifyOptions, VerifyReport, ADAGRAD_REL_TOL, EMA_TOL, GRAD_CHECK_TOL, MOMENTUM_TOL, RECURSION_TOL, STEP_TOL,
};
