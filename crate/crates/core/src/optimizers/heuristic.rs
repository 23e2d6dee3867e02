//! Per-coordinate EMA variants of META-STORM and META-STORM-SG.
//!
//! Running sums are replaced by exponential moving averages with decay
//! `alpha`, and every vector operation in the coefficient updates is
//! coordinate-wise.

use crate::error::Result;
use crate::numeric::ParamVector;
use crate::problems::Problem;
use crate::schedules::HyperParams;

use super::state::{ensure_finite, CoordinateRange, Fault, HeuristicState, HeuristicVariant, StepReport};

fn ema(prev: &ParamVector, alpha: f64, term: &ParamVector) -> ParamVector {
    prev.iter()
        .zip(term.iter())
        .map(|(p, v)| alpha * p + (1.0 - alpha) * v)
        .collect()
}

fn coordinate_momentum(ema_g: &ParamVector, a0: f64) -> ParamVector {
    let a0_sq = a0 * a0;
    ema_g.map(|g| (1.0 + g / a0_sq).powf(-2.0 / 3.0))
}

fn coordinate_stepsize(ema_d: &ParamVector, a: &ParamVector, hp: &HyperParams) -> ParamVector {
    let base = hp.b0.powf(1.0 / hp.p);
    ema_d
        .iter()
        .zip(a.iter())
        .map(|(dv, av)| (base + dv).powf(hp.p) / av.powf(hp.q()))
        .collect()
}

/// One iteration of the EMA variant selected at initialisation.
pub fn step_heuristic(state: &mut HeuristicState, problem: &Problem, hp: &HyperParams) -> Result<StepReport> {
    let t = state.t;
    let alpha = hp.alpha;
    let d_sq = state.d.hadamard(&state.d);
    let ema_d = ema(&state.ema_d, alpha, &d_sq);
    let key = state.next_key();

    let (ema_g, a_next, a_for_b, b, x_next, g_corr, g_new) = match state.variant {
        HeuristicVariant::MetaStormSg => {
            let g_sq = state.g_cached.hadamard(&state.g_cached);
            let ema_g = ema(&state.ema_g, alpha, &g_sq);
            let a_next = coordinate_momentum(&ema_g, hp.a0);
            let b = coordinate_stepsize(&ema_d, &a_next, hp);
            let x_next = move_coordinates(&state.x, hp.eta, &state.d, &b);
            ensure_finite(t, "iterate", x_next.is_finite())?;
            let g_corr = problem.grad_stochastic(&state.x, key)?;
            let g_new = problem.grad_stochastic(&x_next, key)?;
            (ema_g, a_next.clone(), a_next, b, x_next, g_corr, g_new)
        }
        HeuristicVariant::MetaStorm => {
            let b = coordinate_stepsize(&ema_d, &state.a_current, hp);
            let x_next = move_coordinates(&state.x, hp.eta, &state.d, &b);
            ensure_finite(t, "iterate", x_next.is_finite())?;
            let g_corr = problem.grad_stochastic(&state.x, key)?;
            let diff = state.g_cached.sub(&g_corr);
            let ema_g = ema(&state.ema_g, alpha, &diff.hadamard(&diff));
            let a_next = coordinate_momentum(&ema_g, hp.a0);
            let g_new = problem.grad_stochastic(&x_next, key)?;
            (ema_g, a_next, state.a_current.clone(), b, x_next, g_corr, g_new)
        }
    };
    ensure_finite(t, "gradient", g_new.is_finite() && g_corr.is_finite())?;
    ensure_finite(t, "step size", b.iter().all(|v| v.is_finite() && *v > 0.0))?;

    let a_rec = match state.fault {
        Fault::None => &a_next,
        Fault::MisindexedMomentum => &state.a_current,
    };
    let d_next: ParamVector = g_new
        .iter()
        .zip(a_rec.iter())
        .zip(state.d.iter().zip(g_corr.iter()))
        .map(|((g, a), (dv, c))| g + (1.0 - a) * (dv - c))
        .collect();
    ensure_finite(t, "estimator", d_next.is_finite())?;

    let report = StepReport {
        t,
        a_next: a_next.mean(),
        a_for_b: a_for_b.mean(),
        b: b.mean(),
        d_norm: state.d.norm(),
        queries: 2,
        momentum_term: None,
        grad_sample_sq: state.g_cached.norm_sq(),
        grad_diff_sq: Some(state.g_cached.sub(&g_corr).norm_sq()),
        key,
        coordinates: Some(CoordinateRange {
            a_min: a_next.min(),
            a_max: a_next.max(),
            b_min: b.min(),
            b_max: b.max(),
        }),
    };
    state.ema_d = ema_d;
    state.ema_g = ema_g;
    state.a_current = a_next;
    state.x = x_next;
    state.d = d_next;
    state.g_cached = g_new;
    state.draw_index += 1;
    state.queries += 2;
    state.t += 1;
    Ok(report)
}

fn move_coordinates(x: &ParamVector, eta: f64, d: &ParamVector, b: &ParamVector) -> ParamVector {
    x.iter()
        .zip(d.iter().zip(b.iter()))
        .map(|(xv, (dv, bv))| xv - eta * dv / bv)
        .collect()
}
