//! One iteration of each scalar-coefficient STORM-type algorithm.
//!
//! Every step draws a single key `xi_{t+1}` and evaluates it at both `x_{t+1}`
//! and `x_t`. On any non-finite intermediate the state is left untouched.

use crate::error::{Error, Result};
use crate::numeric::ParamVector;
use crate::problems::Problem;
use crate::schedules::{momentum_ms, momentum_na, momentum_sg, stepsize, stepsize_stormplus, HyperParams};

use super::state::{descend, ensure_finite, storm_recursion, Fault, OptimizerState, StepReport};

struct Tail {
    x_next: ParamVector,
    g_new: ParamVector,
    g_corr: ParamVector,
}

fn move_and_query(state: &OptimizerState, problem: &Problem, step: f64) -> Result<Tail> {
    let x_next = descend(&state.x, step, &state.d);
    ensure_finite(state.t, "iterate", x_next.is_finite())?;
    let key = state.next_key();
    let g_corr = problem.grad_stochastic(&state.x, key)?;
    let g_new = problem.grad_stochastic(&x_next, key)?;
    ensure_finite(state.t, "gradient", g_new.is_finite() && g_corr.is_finite())?;
    Ok(Tail { x_next, g_new, g_corr })
}

/// Momentum that enters the estimator recursion, honouring fault injection.
fn recursion_momentum(state: &OptimizerState, a_next: f64) -> f64 {
    match state.fault {
        Fault::None => a_next,
        Fault::MisindexedMomentum => state.a_current,
    }
}

fn commit(state: &mut OptimizerState, tail: Tail, d_next: ParamVector, a_next: f64) {
    state.x = tail.x_next;
    state.d = d_next;
    state.g_cached = tail.g_new;
    state.a_current = a_next;
    state.draw_index += 1;
    state.queries += 2;
    state.t += 1;
}

fn positive_step(state: &OptimizerState, b: f64) -> Result<()> {
    ensure_finite(state.t, "step size", b.is_finite() && b > 0.0)
}

/// META-STORM-SG: momentum from stochastic gradient norms, `b_t` from
/// `a_{t+1}`.
pub fn step_meta_storm_sg(state: &mut OptimizerState, problem: &Problem, hp: &HyperParams) -> Result<StepReport> {
    let grad_sample_sq = state.g_cached.norm_sq();
    let aux_sum = state.aux_sum.with(grad_sample_sq);
    let a_next = momentum_sg(aux_sum.value(), hp.a0).map_err(|_| diverged(state))?;
    let d_norm_sq = state.d.norm_sq();
    let d_sq_sum = state.d_sq_sum.with(d_norm_sq);
    let b = stepsize(d_sq_sum.value(), a_next, hp).map_err(|_| diverged(state))?;
    positive_step(state, b)?;
    let tail = move_and_query(state, problem, hp.eta / b)?;
    let d_next = storm_recursion(&tail.g_new, recursion_momentum(state, a_next), &state.d, &tail.g_corr);
    ensure_finite(state.t, "estimator", d_next.is_finite())?;

    let report = StepReport {
        t: state.t,
        a_next,
        a_for_b: a_next,
        b,
        d_norm: d_norm_sq.sqrt(),
        queries: 2,
        momentum_term: Some(grad_sample_sq),
        grad_sample_sq,
        grad_diff_sq: Some(state.g_cached.sub(&tail.g_corr).norm_sq()),
        key: state.next_key(),
        coordinates: None,
    };
    state.aux_sum = aux_sum;
    state.d_sq_sum = d_sq_sum;
    commit(state, tail, d_next, a_next);
    Ok(report)
}

/// META-STORM: `b_t` from `a_t`, then momentum from the squared difference
/// of two stochastic gradients at `x_t`.
pub fn step_meta_storm(state: &mut OptimizerState, problem: &Problem, hp: &HyperParams) -> Result<StepReport> {
    let d_norm_sq = state.d.norm_sq();
    let d_sq_sum = state.d_sq_sum.with(d_norm_sq);
    let a_t = state.a_current;
    let b = stepsize(d_sq_sum.value(), a_t, hp).map_err(|_| diverged(state))?;
    positive_step(state, b)?;
    let tail = move_and_query(state, problem, hp.eta / b)?;
    let diff_sq = state.g_cached.sub(&tail.g_corr).norm_sq();
    let aux_sum = state.aux_sum.with(diff_sq);
    let a_next = momentum_ms(aux_sum.value(), hp.a0).map_err(|_| diverged(state))?;
    let d_next = storm_recursion(&tail.g_new, recursion_momentum(state, a_next), &state.d, &tail.g_corr);
    ensure_finite(state.t, "estimator", d_next.is_finite())?;

    let report = StepReport {
        t: state.t,
        a_next,
        a_for_b: a_t,
        b,
        d_norm: d_norm_sq.sqrt(),
        queries: 2,
        momentum_term: Some(diff_sq),
        grad_sample_sq: state.g_cached.norm_sq(),
        grad_diff_sq: Some(diff_sq),
        key: state.next_key(),
        coordinates: None,
    };
    state.aux_sum = aux_sum;
    state.d_sq_sum = d_sq_sum;
    commit(state, tail, d_next, a_next);
    Ok(report)
}

/// META-STORM-NA: momentum depends on the round only.
pub fn step_meta_storm_na(state: &mut OptimizerState, problem: &Problem, hp: &HyperParams) -> Result<StepReport> {
    let a_next = momentum_na(state.t, hp.a0)?;
    let d_norm_sq = state.d.norm_sq();
    let d_sq_sum = state.d_sq_sum.with(d_norm_sq);
    let b = stepsize(d_sq_sum.value(), a_next, hp).map_err(|_| diverged(state))?;
    positive_step(state, b)?;
    let tail = move_and_query(state, problem, hp.eta / b)?;
    let d_next = storm_recursion(&tail.g_new, recursion_momentum(state, a_next), &state.d, &tail.g_corr);
    ensure_finite(state.t, "estimator", d_next.is_finite())?;

    let report = StepReport {
        t: state.t,
        a_next,
        a_for_b: a_next,
        b,
        d_norm: d_norm_sq.sqrt(),
        queries: 2,
        momentum_term: Some(1.0),
        grad_sample_sq: state.g_cached.norm_sq(),
        grad_diff_sq: Some(state.g_cached.sub(&tail.g_corr).norm_sq()),
        key: state.next_key(),
        coordinates: None,
    };
    state.d_sq_sum = d_sq_sum;
    commit(state, tail, d_next, a_next);
    Ok(report)
}

/// STORM+: gradient-norm momentum with `b_t = (sum ||d_i||^2 / a_{i+1})^{1/3}`.
///
/// `b0` only stands in for `b_t` while every estimator so far has been zero,
/// in which case the step is zero anyway.
pub fn step_stormplus(state: &mut OptimizerState, problem: &Problem, hp: &HyperParams) -> Result<StepReport> {
    let grad_sample_sq = state.g_cached.norm_sq();
    let momentum_sum = state.momentum_sum.with(grad_sample_sq);
    let a_next = momentum_sg(momentum_sum.value(), hp.a0).map_err(|_| diverged(state))?;
    let d_norm_sq = state.d.norm_sq();
    let d_sq_sum = state.d_sq_sum.with(d_norm_sq);
    let aux_sum = state.aux_sum.with(d_norm_sq / a_next);
    let b = match stepsize_stormplus(aux_sum.value()).map_err(|_| diverged(state))? {
        b if b > 0.0 => b,
        _ => hp.b0,
    };
    positive_step(state, b)?;
    let tail = move_and_query(state, problem, hp.eta / b)?;
    let d_next = storm_recursion(&tail.g_new, recursion_momentum(state, a_next), &state.d, &tail.g_corr);
    ensure_finite(state.t, "estimator", d_next.is_finite())?;

    let report = StepReport {
        t: state.t,
        a_next,
        a_for_b: a_next,
        b,
        d_norm: d_norm_sq.sqrt(),
        queries: 2,
        momentum_term: Some(grad_sample_sq),
        grad_sample_sq,
        grad_diff_sq: Some(state.g_cached.sub(&tail.g_corr).norm_sq()),
        key: state.next_key(),
        coordinates: None,
    };
    state.momentum_sum = momentum_sum;
    state.aux_sum = aux_sum;
    state.d_sq_sum = d_sq_sum;
    commit(state, tail, d_next, a_next);
    Ok(report)
}

/// Fixed-coefficient STORM with constants tuned from the true problem
/// parameters. `x_{t+1} = x_t - (eta / b) d_t`.
pub(crate) fn step_oracle_storm(state: &mut OptimizerState, problem: &Problem, hp: &HyperParams) -> Result<StepReport> {
    let constants = state
        .oracle
        .ok_or_else(|| Error::invalid("oracle-storm state was initialised without constants"))?;
    let d_norm_sq = state.d.norm_sq();
    let d_sq_sum = state.d_sq_sum.with(d_norm_sq);
    let tail = move_and_query(state, problem, hp.eta / constants.b)?;
    let a = constants.a;
    let d_next = storm_recursion(&tail.g_new, recursion_momentum(state, a), &state.d, &tail.g_corr);
    ensure_finite(state.t, "estimator", d_next.is_finite())?;

    let report = StepReport {
        t: state.t,
        a_next: a,
        a_for_b: a,
        b: constants.b,
        d_norm: d_norm_sq.sqrt(),
        queries: 2,
        momentum_term: None,
        grad_sample_sq: state.g_cached.norm_sq(),
        grad_diff_sq: Some(state.g_cached.sub(&tail.g_corr).norm_sq()),
        key: state.next_key(),
        coordinates: None,
    };
    state.d_sq_sum = d_sq_sum;
    commit(state, tail, d_next, a);
    Ok(report)
}

fn diverged(state: &OptimizerState) -> Error {
    Error::Diverged {
        step: state.t,
        what: "accumulator",
    }
}
