//! Analysis quantities computed from run traces, and verifiers for the
//! pathwise identities the update rules must satisfy.
//!
//! Verifiers are read-only. Where they need gradients they re-query the
//! problem with the logged keys, which are pure.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{CompensatedSum, ParamVector, SampleKey};
use crate::optimizers::{CoordinateRange, HeuristicVariant};
use crate::problems::Problem;
use crate::schedules::{stepsize, Algorithm, HyperParams};

/// Telemetry for iterate `x_t`.
///
/// `a` is `a_{t+1}` and `b` is `b_t`, both produced by step `t`; they are
/// absent on the final iterate. For the per-coordinate variants they hold
/// the coordinate mean and `coordinates` the range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: u64,
    pub f_value: Option<f64>,
    pub grad_true_norm: Option<f64>,
    pub d_norm: f64,
    /// `||d_t - grad F(x_t)||`.
    pub eps_norm: Option<f64>,
    pub a: Option<f64>,
    pub b: Option<f64>,
    /// Oracle calls made once `d_t` is available.
    pub queries_cum: u64,
    /// Momentum that entered `b_t`.
    #[serde(skip)]
    pub a_for_b: Option<f64>,
    #[serde(skip)]
    pub momentum_term: Option<f64>,
    #[serde(skip)]
    pub grad_sample_sq: Option<f64>,
    #[serde(skip)]
    pub grad_diff_sq: Option<f64>,
    #[serde(skip)]
    pub coordinates: Option<CoordinateRange>,
}

/// Full vectors around one step, kept only when state logging is on.
#[derive(Debug, Clone, PartialEq)]
pub struct StateLog {
    pub t: u64,
    /// Key of `xi_t`.
    pub key_current: SampleKey,
    /// Key of `xi_{t+1}`.
    pub key_next: SampleKey,
    pub x: ParamVector,
    pub d: ParamVector,
    pub x_next: ParamVector,
    pub d_next: ParamVector,
    /// `a_{t+1}`: one entry for scalar algorithms, one per coordinate for
    /// the heuristics.
    pub a_next: Vec<f64>,
    /// `D_t` and `G_t` of the heuristics.
    pub ema_d: Option<ParamVector>,
    pub ema_g: Option<ParamVector>,
}

/// Sums over a trace. `None` where an ingredient was not recorded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateStats {
    /// `sum ||grad F(x_i)||^2`
    pub h_t: Option<f64>,
    /// `sum ||d_i||^2`
    pub d_t: f64,
    /// `sum ||d_i - grad F(x_i)||^2`
    pub e_t: Option<f64>,
    /// `sum ||grad f(x_i, xi_i)||^2`
    pub h_hat_t: Option<f64>,
    /// `sum ||grad f(x_i, xi_i) - grad f(x_i, xi_{i+1})||^2`
    pub h_tilde_t: Option<f64>,
}

fn sum_sq<'a>(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let mut acc = CompensatedSum::new();
    for v in values {
        let v = v?;
        acc.add(v * v);
    }
    Some(acc.value())
}

fn sum_present(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let mut acc = CompensatedSum::new();
    let mut any = false;
    for v in values.flatten() {
        acc.add(v);
        any = true;
    }
    any.then(|| acc.value())
}

pub fn aggregate(trace: &[TraceRecord]) -> Result<AggregateStats> {
    if trace.is_empty() {
        return Err(Error::invalid("cannot aggregate an empty trace"));
    }
    Ok(AggregateStats {
        h_t: sum_sq(trace.iter().map(|r| r.grad_true_norm)),
        d_t: sum_sq(trace.iter().map(|r| Some(r.d_norm))).unwrap_or(0.0),
        e_t: sum_sq(trace.iter().map(|r| r.eps_norm)),
        h_hat_t: sum_present(trace.iter().map(|r| r.grad_sample_sq)),
        h_tilde_t: sum_present(trace.iter().map(|r| r.grad_diff_sq)),
    })
}

/// `sum_i a_{i+1}^s ||eps_i||^2` over rows that carry both factors.
pub fn weighted_error_sum(trace: &[TraceRecord], s: f64) -> Option<f64> {
    sum_present(trace.iter().map(|r| match (r.a, r.eps_norm) {
        (Some(a), Some(e)) => Some(a.powf(s) * e * e),
        _ => None,
    }))
}

/// Largest normalised residual of
/// `a_{t+1}^{-3/2} - a_t^{-3/2} = s_t / a0^2`, with `a_1 = 1`.
///
/// `a_next[i]` is `a_{i+2}` and `raw_terms[i]` is `s_{i+1}`.
pub fn verify_momentum_identity(a_next: &[f64], raw_terms: &[f64], a0: f64) -> f64 {
    let a0_sq = a0 * a0;
    let mut prev = 1.0f64;
    let mut worst = 0.0f64;
    for (&a, &s) in a_next.iter().zip(raw_terms) {
        let prev_pow = prev.powf(-1.5);
        let lhs = a.powf(-1.5) - prev_pow;
        let residual = (lhs - s / a0_sq).abs() / (1.0 + prev_pow);
        worst = worst.max(if residual.is_nan() { f64::INFINITY } else { residual });
        prev = a;
    }
    worst
}

/// [`verify_momentum_identity`] on a full trace of a scalar adaptive run.
pub fn momentum_identity_from_trace(trace: &[TraceRecord], a0: f64) -> Result<f64> {
    let mut a_next = Vec::new();
    let mut terms = Vec::new();
    check_consecutive(trace)?;
    for row in trace {
        match (row.a, row.momentum_term) {
            (Some(a), Some(s)) => {
                a_next.push(a);
                terms.push(s);
            }
            (None, _) => break,
            (Some(_), None) => {
                return Err(Error::invalid(format!(
                    "trace row {} has no momentum accumulator term",
                    row.t
                )))
            }
        }
    }
    Ok(verify_momentum_identity(&a_next, &terms, a0))
}

fn check_consecutive(trace: &[TraceRecord]) -> Result<()> {
    if trace.is_empty() {
        return Err(Error::invalid("empty trace"));
    }
    if trace.iter().enumerate().any(|(i, r)| r.t != i as u64 + 1) {
        return Err(Error::invalid("trace must contain every iterate (trace_every = 1)"));
    }
    Ok(())
}

/// Re-executes the estimator recursion
/// `d_{t+1} = grad f(x_{t+1}, xi_{t+1}) + (1 - a_{t+1}) (d_t - grad f(x_t, xi_{t+1}))`
/// from logged states with fresh oracle calls and returns the largest
/// relative deviation.
pub fn verify_recursion(logs: &[StateLog], problem: &Problem) -> Result<f64> {
    if logs.is_empty() {
        return Err(Error::invalid("no state log: run with state logging enabled"));
    }
    let mut worst = 0.0f64;
    for log in logs {
        let fresh = problem.grad_stochastic(&log.x_next, log.key_next)?;
        let corr = problem.grad_stochastic(&log.x, log.key_next)?;
        let mut diff_sq = 0.0;
        for i in 0..fresh.len() {
            let a = if log.a_next.len() == 1 { log.a_next[0] } else { log.a_next[i] };
            let predicted = fresh[i] + (1.0 - a) * (log.d[i] - corr[i]);
            let delta = predicted - log.d_next[i];
            diff_sq += delta * delta;
        }
        let scale = log.d_next.norm().max(fresh.norm()).max(f64::MIN_POSITIVE);
        let residual = diff_sq.sqrt() / scale;
        worst = worst.max(if residual.is_nan() { f64::INFINITY } else { residual });
    }
    Ok(worst)
}

/// Recomputes each logged `b_t` from the trace's `d_norm` and `a` columns
/// using the algorithm's own indexing (`a_{t+1}` for SG/NA, `a_t` for
/// META-STORM, the weighted cube root for STORM+). Returns the largest
/// relative mismatch.
pub fn verify_step_indexing(trace: &[TraceRecord], algorithm: Algorithm, hp: &HyperParams) -> Result<f64> {
    check_consecutive(trace)?;
    let mut d_sum = CompensatedSum::new();
    let mut weighted = CompensatedSum::new();
    let mut a_prev = 1.0;
    let mut worst = 0.0f64;
    for row in trace {
        let (Some(a_next), Some(b)) = (row.a, row.b) else {
            break;
        };
        let d_sq = row.d_norm * row.d_norm;
        d_sum.add(d_sq);
        let expected = match algorithm {
            Algorithm::MetaStormSg | Algorithm::MetaStormNa => stepsize(d_sum.value(), a_next, hp)?,
            Algorithm::MetaStorm => stepsize(d_sum.value(), a_prev, hp)?,
            Algorithm::StormPlus => {
                weighted.add(d_sq / a_next);
                weighted.value().cbrt()
            }
            Algorithm::AdaGradNorm => (hp.b0 * hp.b0 + d_sum.value()).sqrt(),
            other => {
                return Err(Error::invalid(format!("no scalar step-size rule to check for {other}")));
            }
        };
        worst = worst.max((b - expected).abs() / expected.abs().max(f64::MIN_POSITIVE));
        a_prev = a_next;
    }
    Ok(worst)
}

/// Checks the heuristics' EMA accumulators against the brute-force weighted
/// sums `(1 - alpha) sum_i alpha^{t-i} v_i` (zero initial state), with the
/// squared-gradient terms recomputed from logged keys. Returns the largest
/// relative per-coordinate error over both `D_t` and `G_t`.
pub fn verify_ema_closed_form(
    logs: &[StateLog],
    problem: &Problem,
    variant: HeuristicVariant,
    alpha: f64,
) -> Result<f64> {
    if logs.is_empty() {
        return Err(Error::invalid("no state log: run with state logging enabled"));
    }
    let mut d_terms: Vec<ParamVector> = Vec::with_capacity(logs.len());
    let mut g_terms: Vec<ParamVector> = Vec::with_capacity(logs.len());
    let mut worst = 0.0f64;
    for (idx, log) in logs.iter().enumerate() {
        let (Some(ema_d), Some(ema_g)) = (&log.ema_d, &log.ema_g) else {
            return Err(Error::invalid(format!("state log {} carries no EMA accumulators", log.t)));
        };
        d_terms.push(log.d.hadamard(&log.d));
        let g = problem.grad_stochastic(&log.x, log.key_current)?;
        g_terms.push(match variant {
            HeuristicVariant::MetaStormSg => g.hadamard(&g),
            HeuristicVariant::MetaStorm => {
                let diff = g.sub(&problem.grad_stochastic(&log.x, log.key_next)?);
                diff.hadamard(&diff)
            }
        });
        let t = idx + 1;
        for (acc, terms) in [(ema_d, &d_terms), (ema_g, &g_terms)] {
            for j in 0..acc.len() {
                let brute: f64 = (1..=t)
                    .map(|i| (1.0 - alpha) * alpha.powi((t - i) as i32) * terms[i - 1][j])
                    .sum();
                let err = (acc[j] - brute).abs();
                let rel = if err == 0.0 { 0.0 } else { err / brute.abs().max(f64::MIN_POSITIVE) };
                worst = worst.max(rel);
            }
        }
    }
    Ok(worst)
}

/// Least-squares fit of `log(metric)` against `log(T)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn slope_estimate(points: &[(f64, f64)]) -> Result<SlopeFit> {
    if points.len() < 3 {
        return Err(Error::invalid(format!("need at least 3 points, got {}", points.len())));
    }
    if points.iter().any(|&(t, m)| !(t > 0.0 && m > 0.0 && t.is_finite() && m.is_finite())) {
        return Err(Error::invalid("T and metric values must be positive and finite"));
    }
    let mut ts: Vec<f64> = points.iter().map(|p| p.0).collect();
    ts.sort_by(f64::total_cmp);
    if ts.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::invalid("T values must be distinct"));
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Ok(SlopeFit { slope, intercept, r2 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizers::{run_with, RunOptions};
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn row(t: u64, grad: f64, d: f64, eps: f64) -> TraceRecord {
        TraceRecord {
            t,
            f_value: None,
            grad_true_norm: Some(grad),
            d_norm: d,
            eps_norm: Some(eps),
            a: None,
            b: None,
            queries_cum: t,
            a_for_b: None,
            momentum_term: None,
            grad_sample_sq: None,
            grad_diff_sq: None,
            coordinates: None,
        }
    }

    #[test]
    fn aggregate_single_record() {
        let s = aggregate(&[row(1, 2.0, 1.0, 0.5)]).unwrap();
        assert_eq!(s.h_t, Some(4.0));
        assert_eq!(s.d_t, 1.0);
        assert_eq!(s.e_t, Some(0.25));
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn decomposition_bound_on_consistent_trace() {
        let mut rng = SampleKey::auxiliary(3, 3);
        let dim = 5;
        let trace: Vec<TraceRecord> = (1..=100)
            .map(|t| {
                let grad: ParamVector = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                let eps: ParamVector = (0..dim).map(|_| 0.3 * rng.sample::<f64, _>(StandardNormal)).collect();
                let d = grad.add(&eps);
                row(t, grad.norm(), d.norm(), eps.norm())
            })
            .collect();
        let s = aggregate(&trace).unwrap();
        assert!(s.h_t.unwrap() <= 2.0 * s.d_t + 2.0 * s.e_t.unwrap() + 1e-9);
    }

    #[test]
    fn momentum_identity_negative_control() {
        let a0 = 1.0;
        let terms: Vec<f64> = (0..50).map(|i| 0.5 + (i % 7) as f64).collect();
        let mut sum = 0.0;
        let a: Vec<f64> = terms
            .iter()
            .map(|s| {
                sum += s;
                crate::schedules::momentum_sg(sum, a0).unwrap()
            })
            .collect();
        assert!(verify_momentum_identity(&a, &terms, a0) < 1e-12);
        let mut shifted = vec![1.0];
        shifted.extend_from_slice(&a[..a.len() - 1]);
        assert!(verify_momentum_identity(&shifted, &terms, a0) > 1e-3);
    }

    #[test]
    fn na_identity_is_exact_increment() {
        let a0 = 2.0;
        let a: Vec<f64> = (1..100).map(|t| crate::schedules::momentum_na(t, a0).unwrap()).collect();
        let ones = vec![1.0; a.len()];
        assert!(verify_momentum_identity(&a, &ones, a0) < 1e-13);
    }

    #[test]
    fn recursion_check_requires_logs() {
        let p = Problem::noisy_quadratic(vec![1.0], 0.0).unwrap();
        assert!(verify_recursion(&[], &p).is_err());
    }

    #[test]
    fn step_indexing_detects_wrong_rule() {
        let p = Problem::noisy_quadratic(vec![1.0, 2.0], 1.0).unwrap();
        let hp = HyperParams::new(Algorithm::MetaStorm, 1.0, 1.0, 0.5, 0.3, 0.0).unwrap();
        let r = run_with(&p, Algorithm::MetaStorm, hp, ParamVector::filled(2, 1.0), 3, RunOptions::new(100)).unwrap();
        assert!(verify_step_indexing(&r.trace, Algorithm::MetaStorm, &hp).unwrap() < 1e-12);
        assert!(verify_step_indexing(&r.trace, Algorithm::MetaStormSg, &hp).unwrap() > 1e-3);
    }

    #[test]
    fn slope_of_exact_power_law() {
        let pts: Vec<(f64, f64)> = [1e3, 1e4, 1e5].iter().map(|&t: &f64| (t, t.powf(-1.0 / 3.0))).collect();
        let fit = slope_estimate(&pts).unwrap();
        assert!((fit.slope + 1.0 / 3.0).abs() <= 1e-12);
        assert!((fit.r2 - 1.0).abs() <= 1e-12);
        let flat = slope_estimate(&[(10.0, 2.0), (100.0, 2.0), (1000.0, 2.0)]).unwrap();
        assert_eq!(flat.slope, 0.0);
        assert!(slope_estimate(&pts[..2]).is_err());
        assert!(slope_estimate(&[(1.0, 1.0), (1.0, 2.0), (3.0, 1.0)]).is_err());
        assert!(slope_estimate(&[(1.0, -1.0), (2.0, 2.0), (3.0, 1.0)]).is_err());
    }

    #[test]
    fn slope_of_noisy_power_law() {
        let ts = [1e3, 1e4, 1e5];
        let mut rng = SampleKey::auxiliary(11, 0);
        for _ in 0..20 {
            let pts: Vec<(f64, f64)> = ts
                .iter()
                .map(|&t: &f64| {
                    let noise: f64 = rng.sample(StandardNormal);
                    (t, t.powf(-1.0 / 3.0) * (1.0 + 0.05 * noise))
                })
                .collect();
            let fit = slope_estimate(&pts).unwrap();
            assert!((-0.40..=-0.27).contains(&fit.slope), "{}", fit.slope);
        }
    }

    proptest! {
        #[test]
        fn aggregate_is_permutation_invariant_for_integers(values in prop::collection::vec((0u32..1000, 0u32..1000, 0u32..1000), 1..60), rot in 0usize..60) {
            let trace: Vec<TraceRecord> = values
                .iter()
                .enumerate()
                .map(|(i, &(g, d, e))| row(i as u64 + 1, g as f64, d as f64, e as f64))
                .collect();
            let mut rotated = trace.clone();
            let k = rot % rotated.len();
            rotated.rotate_left(k);
            rotated.reverse();
            let a = aggregate(&trace).unwrap();
            let b = aggregate(&rotated).unwrap();
            prop_assert_eq!(a, b);
            let exact: u64 = values.iter().map(|&(g, _, _)| (g as u64) * (g as u64)).sum();
            prop_assert_eq!(a.h_t.unwrap(), exact as f64);
        }
    }
}
