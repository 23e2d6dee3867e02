//! Seeded run matrices, trace files and summaries.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::diagnostics::TraceRecord;
use crate::error::{Error, Result};
use crate::numeric::ParamVector;
use crate::optimizers::{run_with, RunOptions, RunResult};
use crate::problems::{Problem, Provenance};

use super::config::RunConfig;

pub const TRACE_HEADER: [&str; 8] = ["t", "f_value", "grad_true_norm", "d_norm", "eps_norm", "a", "b", "queries_cum"];
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExecOptions {
    /// Worker threads; 0 lets the pool decide.
    pub jobs: usize,
    pub write_traces: bool,
}

impl Default for ExecOptions {
    fn default() -> Self {
        Self {
            jobs: 0,
            write_traces: true,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ProblemInfo {
    pub family: &'static str,
    pub dim: usize,
    pub beta: f64,
    pub sigma: f64,
    pub f_star: Option<f64>,
    pub beta_provenance: Provenance,
    pub sigma_provenance: Provenance,
}

impl ProblemInfo {
    pub fn of(problem: &Problem) -> Self {
        Self {
            family: problem.family_name(),
            dim: problem.dim(),
            beta: problem.beta,
            sigma: problem.sigma,
            f_star: problem.f_star,
            beta_provenance: problem.beta_provenance,
            sigma_provenance: problem.sigma_provenance,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub eta: f64,
    pub seed: u64,
    /// File name relative to the output directory, when traces are written.
    pub trace_file: Option<String>,
    #[serde(flatten)]
    pub result: RunResult,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricStats {
    pub mean: f64,
    /// Sample standard deviation; zero for a single value.
    pub std: f64,
    pub n: usize,
}

impl MetricStats {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
                n,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std, n }
    }
}

/// Across-seed statistics for one eta, over the runs that did not diverge.
#[derive(Debug, Clone, Serialize)]
pub struct EtaSummary {
    pub eta: f64,
    pub seeds: usize,
    pub diverged: usize,
    pub grad_norm_out: MetricStats,
    pub min_grad_norm: MetricStats,
    pub mean_grad_norm: MetricStats,
    pub f_final: MetricStats,
    pub queries: MetricStats,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub config: RunConfig,
    pub problem: ProblemInfo,
    pub runs: Vec<RunRecord>,
    pub per_eta: Vec<EtaSummary>,
    /// Smallest mean `||grad F(x_out)||`; never an eta with a diverged seed.
    pub best_eta: Option<f64>,
}

pub fn trace_file_name(algorithm: &str, eta: f64, seed: u64) -> String {
    format!("trace_{algorithm}_{eta}_{seed}.csv")
}

fn field(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Renders a trace as CSV. Absent values are empty fields.
pub fn trace_csv(trace: &[TraceRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::invalid(format!("csv encoding failed: {e}"));
    w.write_record(TRACE_HEADER).map_err(csv_err)?;
    for r in trace {
        w.write_record([
            r.t.to_string(),
            field(r.f_value),
            field(r.grad_true_norm),
            r.d_norm.to_string(),
            field(r.eps_norm),
            field(r.a),
            field(r.b),
            r.queries_cum.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.into_inner()
        .map_err(|e| Error::invalid(format!("csv encoding failed: {e}")))
}

/// Writes through a sibling temporary file and a rename, so readers never
/// observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub(crate) fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))
}

/// Lowest mean final gradient norm among etas without diverged seeds; ties
/// go to the smaller eta.
pub fn select_best_eta(per_eta: &[EtaSummary]) -> Option<f64> {
    per_eta
        .iter()
        .filter(|s| s.diverged == 0 && s.grad_norm_out.n > 0 && s.grad_norm_out.mean.is_finite())
        .min_by(|x, y| {
            x.grad_norm_out
                .mean
                .total_cmp(&y.grad_norm_out.mean)
                .then(x.eta.total_cmp(&y.eta))
        })
        .map(|s| s.eta)
}

fn eta_summary(eta: f64, runs: &[&RunRecord]) -> EtaSummary {
    let ok: Vec<&RunResult> = runs.iter().map(|r| &r.result).filter(|r| !r.diverged()).collect();
    let stats = |f: fn(&RunResult) -> f64| MetricStats::of(&ok.iter().map(|r| f(r)).collect::<Vec<_>>());
    EtaSummary {
        eta,
        seeds: runs.len(),
        diverged: runs.len() - ok.len(),
        grad_norm_out: stats(|r| r.grad_norm_out),
        min_grad_norm: stats(|r| r.min_grad_norm),
        mean_grad_norm: stats(|r| r.mean_grad_norm),
        f_final: stats(|r| r.f_final),
        queries: stats(|r| r.queries as f64),
    }
}

/// Runs every (eta, seed) pair of `config` and returns results in grid order.
pub(crate) fn run_matrix(config: &RunConfig, problem: &Problem, big_t: u64, trace_every: u64, jobs: usize, seeds: &[u64]) -> Result<Vec<(f64, u64, RunResult)>> {
    let grid: Vec<(f64, u64)> = config
        .etas
        .iter()
        .flat_map(|&eta| seeds.iter().map(move |&s| (eta, s)))
        .collect();
    let x1 = ParamVector::from(config.x1.clone());
    pool(jobs)?.install(|| {
        grid.par_iter()
            .map(|&(eta, seed)| {
                let opts = RunOptions::new(big_t).trace_every(trace_every);
                run_with(problem, config.algorithm, config.hyper_for(eta), x1.clone(), seed, opts)
                    .map(|r| (eta, seed, r))
            })
            .collect()
    })
}

/// Runs the full matrix, writes one trace per run and `summary.json` into
/// `config.output`, and returns the summary.
pub fn execute(config: &RunConfig, opts: ExecOptions) -> Result<RunSummary> {
    config.validate()?;
    let problem = config.problem.build()?;
    let out_dir: &PathBuf = &config.output;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let results = run_matrix(config, &problem, config.big_t, config.trace_every, opts.jobs, &config.seeds)?;
    let mut runs = Vec::with_capacity(results.len());
    for (eta, seed, result) in results {
        let trace_file = if opts.write_traces {
            let name = trace_file_name(config.algorithm.name(), eta, seed);
            write_atomic(&out_dir.join(&name), &trace_csv(&result.trace)?)?;
            Some(name)
        } else {
            None
        };
        runs.push(RunRecord {
            eta,
            seed,
            trace_file,
            result,
        });
    }
    let per_eta: Vec<EtaSummary> = config
        .etas
        .iter()
        .map(|&eta| {
            let group: Vec<&RunRecord> = runs.iter().filter(|r| r.eta == eta).collect();
            eta_summary(eta, &group)
        })
        .collect();
    let summary = RunSummary {
        config: config.clone(),
        problem: ProblemInfo::of(&problem),
        best_eta: select_best_eta(&per_eta),
        per_eta,
        runs,
    };
    let json = serde_json::to_vec_pretty(&summary)
        .map_err(|e| Error::invalid(format!("summary encoding failed: {e}")))?;
    write_atomic(&out_dir.join(SUMMARY_FILE), &json)?;
    Ok(summary)
}
