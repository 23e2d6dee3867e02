//! Convergence studies: the same experiment at several horizons `T`.

use rand::RngCore;
use serde::Serialize;

use crate::diagnostics::{slope_estimate, SlopeFit};
use crate::error::{Error, Result};
use crate::numeric::SampleKey;

use super::config::RunConfig;
use super::execute::{run_matrix, write_atomic, MetricStats};

pub const SWEEP_FILE: &str = "sweep.json";

#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    #[serde(rename = "T")]
    pub big_t: u64,
    pub grad_norm_out: MetricStats,
    pub diverged: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepCurve {
    pub eta: f64,
    pub points: Vec<SweepPoint>,
    /// Log-log fit of mean `||grad F(x_out)||` against `T`; absent when a
    /// point has no positive mean.
    pub fit: Option<SlopeFit>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub config: RunConfig,
    pub curves: Vec<SweepCurve>,
}

/// Seed used for `seed` at horizon `big_t`, so that every horizon sees
/// fresh randomness.
pub fn sweep_seed(seed: u64, big_t: u64) -> u64 {
    SampleKey::auxiliary(seed, big_t).next_u64()
}

pub fn check_horizons(t_list: &[u64]) -> Result<()> {
    let mut errors = Vec::new();
    if t_list.len() < 3 {
        errors.push(format!("need at least 3 horizons, got {}", t_list.len()));
    }
    if t_list.contains(&0) {
        errors.push("horizons must be positive".into());
    }
    let mut sorted = t_list.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != t_list.len() {
        errors.push("horizons must be distinct".into());
    }
    if let (Some(&lo), Some(&hi)) = (sorted.first(), sorted.last()) {
        if lo > 0 && (hi as f64) < 100.0 * lo as f64 {
            errors.push(format!("horizons must span at least two decades, got {lo}..{hi}"));
        }
    }
    if errors.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(errors))
    }
}

/// Runs `config` at each horizon and fits the decay of the mean output
/// gradient norm. Only the endpoints of each trace are kept.
pub fn sweep_convergence(config: &RunConfig, t_list: &[u64], jobs: usize) -> Result<SweepReport> {
    config.validate()?;
    check_horizons(t_list)?;
    let problem = config.problem.build()?;
    let mut curves: Vec<SweepCurve> = config
        .etas
        .iter()
        .map(|&eta| SweepCurve {
            eta,
            points: Vec::new(),
            fit: None,
        })
        .collect();
    for &big_t in t_list {
        let seeds: Vec<u64> = config.seeds.iter().map(|&s| sweep_seed(s, big_t)).collect();
        let results = run_matrix(config, &problem, big_t, big_t, jobs, &seeds)?;
        for curve in &mut curves {
            let group: Vec<_> = results.iter().filter(|(eta, _, _)| *eta == curve.eta).collect();
            let ok: Vec<f64> = group
                .iter()
                .filter(|(_, _, r)| !r.diverged())
                .map(|(_, _, r)| r.grad_norm_out)
                .collect();
            curve.points.push(SweepPoint {
                big_t,
                grad_norm_out: MetricStats::of(&ok),
                diverged: group.len() - ok.len(),
            });
        }
    }
    for curve in &mut curves {
        let pts: Vec<(f64, f64)> = curve
            .points
            .iter()
            .map(|p| (p.big_t as f64, p.grad_norm_out.mean))
            .collect();
        curve.fit = slope_estimate(&pts).ok();
    }
    Ok(SweepReport {
        config: config.clone(),
        curves,
    })
}

/// Runs the sweep and writes `sweep.json` into the config's output directory.
pub fn sweep_to_dir(config: &RunConfig, t_list: &[u64], jobs: usize) -> Result<SweepReport> {
    let report = sweep_convergence(config, t_list, jobs)?;
    std::fs::create_dir_all(&config.output).map_err(|e| Error::io(&config.output, e))?;
    let json = serde_json::to_vec_pretty(&report)
        .map_err(|e| Error::invalid(format!("sweep encoding failed: {e}")))?;
    write_atomic(&config.output.join(SWEEP_FILE), &json)?;
    Ok(report)
}
