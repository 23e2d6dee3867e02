use std::time::Instant;

use rand::Rng;
use serde::Serialize;

use crate::diagnostics::{StateLog, TraceRecord};
use crate::error::{Error, Result};
use crate::numeric::{ParamVector, SampleKey};
use crate::problems::Problem;
use crate::schedules::{Algorithm, HyperParams};

use super::baseline::{step_baseline, BaselineKind};
use super::heuristic::step_heuristic;
use super::state::{init, Fault, State, StepReport};
use super::storm::{step_meta_storm, step_meta_storm_na, step_meta_storm_sg, step_stormplus};

const PURPOSE_OUTPUT_INDEX: u64 = 0x0717;

/// An algorithm bound to its hyperparameters and mutable state.
#[derive(Debug, Clone)]
pub struct Optimizer {
    algorithm: Algorithm,
    hp: HyperParams,
    state: State,
}

impl Optimizer {
    pub fn new(
        problem: &Problem,
        algorithm: Algorithm,
        hp: HyperParams,
        x1: ParamVector,
        run_seed: u64,
        horizon: u64,
    ) -> Result<Self> {
        let state = init(problem, algorithm, &hp, x1, run_seed, horizon)?;
        Ok(Self { algorithm, hp, state })
    }

    pub fn algorithm(&self) -> Algorithm {
        self.algorithm
    }

    pub fn hyper_params(&self) -> &HyperParams {
        &self.hp
    }

    pub fn state(&self) -> &State {
        &self.state
    }

    pub fn set_fault(&mut self, fault: Fault) {
        match &mut self.state {
            State::Scalar(s) => s.fault = fault,
            State::Heuristic(h) => h.fault = fault,
        }
    }

    pub fn t(&self) -> u64 {
        match &self.state {
            State::Scalar(s) => s.t,
            State::Heuristic(h) => h.t,
        }
    }

    pub fn x(&self) -> &ParamVector {
        match &self.state {
            State::Scalar(s) => &s.x,
            State::Heuristic(h) => &h.x,
        }
    }

    pub fn d(&self) -> &ParamVector {
        match &self.state {
            State::Scalar(s) => &s.d,
            State::Heuristic(h) => &h.d,
        }
    }

    pub fn queries(&self) -> u64 {
        match &self.state {
            State::Scalar(s) => s.queries,
            State::Heuristic(h) => h.queries,
        }
    }

    /// Current momentum `a_t`, one entry per coordinate for the heuristics.
    pub fn momentum(&self) -> Vec<f64> {
        match &self.state {
            State::Scalar(s) => vec![s.a_current],
            State::Heuristic(h) => h.a_current.as_slice().to_vec(),
        }
    }

    /// Key of the sample `xi_t` behind the current cached gradient.
    pub fn current_key(&self) -> SampleKey {
        let (seed, idx) = match &self.state {
            State::Scalar(s) => (s.run_seed, s.draw_index),
            State::Heuristic(h) => (h.run_seed, h.draw_index),
        };
        SampleKey::new(seed, idx - 1)
    }

    pub fn step(&mut self, problem: &Problem) -> Result<StepReport> {
        let hp = &self.hp;
        match (&mut self.state, self.algorithm) {
            (State::Heuristic(h), _) => step_heuristic(h, problem, hp),
            (State::Scalar(s), Algorithm::MetaStorm) => step_meta_storm(s, problem, hp),
            (State::Scalar(s), Algorithm::MetaStormSg) => step_meta_storm_sg(s, problem, hp),
            (State::Scalar(s), Algorithm::MetaStormNa) => step_meta_storm_na(s, problem, hp),
            (State::Scalar(s), Algorithm::StormPlus) => step_stormplus(s, problem, hp),
            (State::Scalar(s), Algorithm::Sgd) => step_baseline(s, problem, hp, BaselineKind::Sgd),
            (State::Scalar(s), Algorithm::AdaGradNorm) => step_baseline(s, problem, hp, BaselineKind::AdaGradNorm),
            (State::Scalar(s), Algorithm::OracleStorm) => step_baseline(s, problem, hp, BaselineKind::OracleStorm),
            (State::Scalar(_), alg) => Err(Error::invalid(format!("{alg} needs per-coordinate state"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    /// Number of iterates `T`; the run performs `T - 1` transitions.
    pub big_t: u64,
    /// Record every n-th iterate in the trace (the last is always kept).
    pub trace_every: u64,
    /// Keep full per-step vectors for re-execution checks.
    pub log_states: bool,
    pub fault: Fault,
}

impl RunOptions {
    pub fn new(big_t: u64) -> Self {
        Self {
            big_t,
            trace_every: default_trace_every(big_t),
            log_states: false,
            fault: Fault::None,
        }
    }

    pub fn trace_every(mut self, every: u64) -> Self {
        self.trace_every = every;
        self
    }

    pub fn log_states(mut self, on: bool) -> Self {
        self.log_states = on;
        self
    }

    pub fn fault(mut self, fault: Fault) -> Self {
        self.fault = fault;
        self
    }
}

/// One row per iterate up to `T = 10^4`, about `10^4` rows beyond.
pub fn default_trace_every(big_t: u64) -> u64 {
    if big_t <= 10_000 {
        1
    } else {
        (big_t / 10_000).max(1)
    }
}

/// Outcome of a single seeded run.
#[derive(Debug, Clone, Serialize)]
pub struct RunResult {
    pub algorithm: Algorithm,
    pub run_seed: u64,
    pub big_t: u64,
    /// Pre-drawn uniform index in `[1, T]` of the reported iterate.
    pub out_index: u64,
    pub x_out: ParamVector,
    pub grad_norm_out: f64,
    pub f_out: f64,
    pub min_grad_norm: f64,
    pub mean_grad_norm: f64,
    /// `F` and `||grad F||` at the last iterate reached.
    pub f_final: f64,
    pub grad_norm_final: f64,
    pub queries: u64,
    pub wall_time_s: f64,
    /// Step at which a non-finite value appeared.
    pub diverged_at: Option<u64>,
    #[serde(skip)]
    pub trace: Vec<TraceRecord>,
    #[serde(skip)]
    pub states: Vec<StateLog>,
}

impl RunResult {
    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }
}

/// Draws the uniform output index for a run of length `big_t`.
pub fn output_index(run_seed: u64, big_t: u64) -> u64 {
    SampleKey::auxiliary(run_seed, PURPOSE_OUTPUT_INDEX).random_range(1..=big_t)
}

pub fn run(
    problem: &Problem,
    algorithm: Algorithm,
    hp: HyperParams,
    x1: ParamVector,
    run_seed: u64,
    big_t: u64,
    trace_every: u64,
) -> Result<RunResult> {
    run_with(
        problem,
        algorithm,
        hp,
        x1,
        run_seed,
        RunOptions::new(big_t).trace_every(trace_every),
    )
}

/// Executes a run and collects the diagnostics trace.
///
/// Divergence is not an error: the result is flagged and the trace stops at
/// the failing iterate.
pub fn run_with(
    problem: &Problem,
    algorithm: Algorithm,
    hp: HyperParams,
    x1: ParamVector,
    run_seed: u64,
    opts: RunOptions,
) -> Result<RunResult> {
    if opts.big_t == 0 {
        return Err(Error::invalid("T must be at least 1"));
    }
    if opts.trace_every == 0 {
        return Err(Error::invalid("trace_every must be at least 1"));
    }
    let started = Instant::now();
    let big_t = opts.big_t;
    let out_index = output_index(run_seed, big_t);
    let mut opt = Optimizer::new(problem, algorithm, hp, x1, run_seed, big_t)?;
    opt.set_fault(opts.fault);

    let mut trace = Vec::new();
    let mut states = Vec::new();
    let mut x_out = None;
    let (mut grad_norm_out, mut f_out) = (f64::NAN, f64::NAN);
    let mut min_grad = f64::INFINITY;
    let mut grad_sum = crate::numeric::CompensatedSum::new();
    let mut visited = 0u64;
    let mut diverged_at = None;
    let (mut f_last, mut g_last) = (f64::NAN, f64::NAN);

    for t in 1..=big_t {
        let x = opt.x();
        let grad = problem.grad_true(x)?;
        let grad_norm = grad.norm();
        let f_value = problem.value_true(x)?;
        let eps_norm = opt.d().sub(&grad).norm();
        visited += 1;
        grad_sum.add(grad_norm);
        min_grad = min_grad.min(grad_norm);
        f_last = f_value;
        g_last = grad_norm;
        if t == out_index {
            x_out = Some(x.clone());
            grad_norm_out = grad_norm;
            f_out = f_value;
        }
        let mut row = TraceRecord {
            t,
            f_value: Some(f_value),
            grad_true_norm: Some(grad_norm),
            d_norm: opt.d().norm(),
            eps_norm: Some(eps_norm),
            a: None,
            b: None,
            queries_cum: opt.queries(),
            a_for_b: None,
            momentum_term: None,
            grad_sample_sq: None,
            grad_diff_sq: None,
            coordinates: None,
        };
        let mut keep = (t - 1) % opts.trace_every == 0 || t == big_t;
        if t < big_t {
            let before = opts.log_states.then(|| (opt.x().clone(), opt.d().clone(), opt.current_key()));
            match opt.step(problem) {
                Ok(report) => {
                    row.a = Some(report.a_next);
                    row.b = Some(report.b);
                    row.a_for_b = Some(report.a_for_b);
                    row.momentum_term = report.momentum_term;
                    row.grad_sample_sq = Some(report.grad_sample_sq);
                    row.grad_diff_sq = report.grad_diff_sq;
                    row.coordinates = report.coordinates;
                    if let Some((x_prev, d_prev, key_current)) = before {
                        states.push(state_log(&opt, t, key_current, report.key, x_prev, d_prev, report.a_next));
                    }
                }
                Err(Error::Diverged { step, .. }) => {
                    diverged_at = Some(step);
                    keep = true;
                }
                Err(e) => return Err(e),
            }
        }
        if keep {
            trace.push(row);
        }
        if diverged_at.is_some() {
            break;
        }
    }

    let x_out = x_out.unwrap_or_else(|| opt.x().clone());
    if grad_norm_out.is_nan() {
        grad_norm_out = g_last;
        f_out = f_last;
    }
    Ok(RunResult {
        algorithm,
        run_seed,
        big_t,
        out_index,
        x_out,
        grad_norm_out,
        f_out,
        min_grad_norm: min_grad,
        mean_grad_norm: grad_sum.value() / visited as f64,
        f_final: f_last,
        grad_norm_final: g_last,
        queries: opt.queries(),
        wall_time_s: started.elapsed().as_secs_f64(),
        diverged_at,
        trace,
        states,
    })
}

fn state_log(
    opt: &Optimizer,
    t: u64,
    key_current: SampleKey,
    key_next: SampleKey,
    x: ParamVector,
    d: ParamVector,
    a_next_scalar: f64,
) -> StateLog {
    let (a_next, ema_d, ema_g) = match opt.state() {
        State::Scalar(_) => (vec![a_next_scalar], None, None),
        State::Heuristic(h) => (
            h.a_current.as_slice().to_vec(),
            Some(h.ema_d.clone()),
            Some(h.ema_g.clone()),
        ),
    };
    StateLog {
        t,
        key_current,
        key_next,
        x,
        d,
        x_next: opt.x().clone(),
        d_next: opt.d().clone(),
        a_next,
        ema_d,
        ema_g,
    }
}
