//! Comparison baselines: plain SGD, AdaGrad-Norm and oracle-tuned STORM.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::problems::Problem;
use crate::schedules::HyperParams;

use super::state::{descend, ensure_finite, OptimizerState, StepReport};
use super::storm::step_oracle_storm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaselineKind {
    Sgd,
    AdaGradNorm,
    OracleStorm,
}

/// One iteration of a baseline. SGD and AdaGrad-Norm query the oracle once
/// per step; oracle-tuned STORM twice.
pub fn step_baseline(
    state: &mut OptimizerState,
    problem: &Problem,
    hp: &HyperParams,
    kind: BaselineKind,
) -> Result<StepReport> {
    match kind {
        BaselineKind::Sgd => single_query_step(state, problem, hp, 1.0, None),
        BaselineKind::AdaGradNorm => {
            let g_sq = state.g_cached.norm_sq();
            let sum = state.d_sq_sum.with(g_sq);
            let b = (hp.b0 * hp.b0 + sum.value()).sqrt();
            ensure_finite(state.t, "step size", b.is_finite() && b > 0.0)?;
            single_query_step(state, problem, hp, b, Some(sum))
        }
        BaselineKind::OracleStorm => step_oracle_storm(state, problem, hp),
    }
}

fn single_query_step(
    state: &mut OptimizerState,
    problem: &Problem,
    hp: &HyperParams,
    b: f64,
    new_sum: Option<crate::numeric::CompensatedSum>,
) -> Result<StepReport> {
    let g = &state.g_cached;
    let x_next = descend(&state.x, hp.eta / b, g);
    ensure_finite(state.t, "iterate", x_next.is_finite())?;
    let key = state.next_key();
    let g_new = problem.grad_stochastic(&x_next, key)?;
    ensure_finite(state.t, "gradient", g_new.is_finite())?;

    let g_sq = g.norm_sq();
    let report = StepReport {
        t: state.t,
        a_next: 1.0,
        a_for_b: 1.0,
        b,
        d_norm: g_sq.sqrt(),
        queries: 1,
        momentum_term: None,
        grad_sample_sq: g_sq,
        grad_diff_sq: None,
        key,
        coordinates: None,
    };
    if let Some(sum) = new_sum {
        state.d_sq_sum = sum;
    } else {
        state.d_sq_sum.add(g_sq);
    }
    state.x = x_next;
    state.d = g_new.clone();
    state.g_cached = g_new;
    state.draw_index += 1;
    state.queries += 1;
    state.t += 1;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::ParamVector;
    use crate::optimizers::state::{init, State};
    use crate::schedules::Algorithm;

    fn scalar(p: &Problem, alg: Algorithm, hp: &HyperParams, x1: &[f64], horizon: u64) -> OptimizerState {
        match init(p, alg, hp, ParamVector::from(x1), 0, horizon).unwrap() {
            State::Scalar(s) => s,
            State::Heuristic(_) => unreachable!(),
        }
    }

    #[test]
    fn sgd_half_step_on_identity() {
        let p = Problem::noisy_quadratic(vec![1.0, 1.0], 0.0).unwrap();
        let hp = HyperParams::preset(Algorithm::Sgd, 2).with_eta(0.5);
        let mut s = scalar(&p, Algorithm::Sgd, &hp, &[1.0, 0.0], 10);
        let r = step_baseline(&mut s, &p, &hp, BaselineKind::Sgd).unwrap();
        assert_eq!(s.x.as_slice(), &[0.5, 0.0]);
        assert_eq!(r.queries, 1);
        assert_eq!(s.queries, 2);
    }

    #[test]
    fn adagrad_norm_step() {
        let p = Problem::noisy_quadratic(vec![1.0, 1.0], 0.0).unwrap();
        let hp = HyperParams::preset(Algorithm::AdaGradNorm, 2).with_eta(1.0);
        let mut s = scalar(&p, Algorithm::AdaGradNorm, &hp, &[3.0, 4.0], 10);
        let r = step_baseline(&mut s, &p, &hp, BaselineKind::AdaGradNorm).unwrap();
        let b = (1e-16f64 + 25.0).sqrt();
        assert_eq!(r.b, b);
        assert_eq!(s.x[0], 3.0 - (1.0 / b) * 3.0);
    }

    #[test]
    fn oracle_storm_noise_free_is_gradient_descent() {
        let beta = 4.0;
        let p = Problem::noisy_quadratic(vec![1.0, beta], 0.0).unwrap();
        let hp = HyperParams::preset(Algorithm::OracleStorm, 2);
        let mut s = scalar(&p, Algorithm::OracleStorm, &hp, &[1.0, 1.0], 1000);
        let c = s.oracle.unwrap();
        assert_eq!(c.a, 1.0);
        assert!((c.b - 2.0 * 2f64.sqrt() * beta).abs() < 1e-14);
        let mut x = ParamVector::from(&[1.0, 1.0][..]);
        for _ in 0..20 {
            step_baseline(&mut s, &p, &hp, BaselineKind::OracleStorm).unwrap();
            x = descend(&x, 1.0 / c.b, &p.grad_true(&x).unwrap());
            assert_eq!(s.x, x);
        }
    }

    #[test]
    fn oracle_storm_needs_known_optimum() {
        let p = Problem::logistic_synthetic(2, 20, 0.1, 0.1, 0).unwrap();
        let hp = HyperParams::preset(Algorithm::OracleStorm, 2);
        assert!(init(&p, Algorithm::OracleStorm, &hp, ParamVector::zeros(2), 0, 10).is_err());
    }
}
