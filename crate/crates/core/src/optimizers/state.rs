use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{CompensatedSum, ParamVector, SampleKey};
use crate::problems::Problem;
use crate::schedules::{oracle_tuned_constants, Algorithm, HyperParams, OracleConstants};

/// Deliberate defects used as negative controls for the verifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fault {
    #[default]
    None,
    /// The estimator recursion uses `a_t` instead of `a_{t+1}` while the
    /// reported coefficient is still `a_{t+1}`.
    MisindexedMomentum,
}

/// State of the scalar-coefficient algorithms (META-STORM family, STORM+ and
/// the baselines).
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub algorithm: Algorithm,
    pub run_seed: u64,
    /// 1-based iteration counter; `x` is `x_t`.
    pub t: u64,
    pub x: ParamVector,
    /// Estimator `d_t`.
    pub d: ParamVector,
    /// `grad f(x_t, xi_t)` from the previous step's fresh-point query.
    pub g_cached: ParamVector,
    /// `a_t`; `a_1 = 1`.
    pub a_current: f64,
    /// `sum_{i<=t} ||d_i||^2` once step `t` has run.
    pub d_sq_sum: CompensatedSum,
    /// SG: sum of `||grad f(x_i, xi_i)||^2`; META-STORM: sum of
    /// `||grad f(x_i, xi_i) - grad f(x_i, xi_{i+1})||^2`; STORM+: sum of
    /// `||d_i||^2 / a_{i+1}`; unused otherwise.
    pub aux_sum: CompensatedSum,
    /// STORM+'s gradient-norm accumulator for its momentum.
    pub momentum_sum: CompensatedSum,
    /// Index of the next sample key to draw.
    pub draw_index: u64,
    /// Oracle calls so far.
    pub queries: u64,
    pub oracle: Option<OracleConstants>,
    pub fault: Fault,
}

/// Which base algorithm a per-coordinate EMA variant follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeuristicVariant {
    /// EMA of squared gradient differences; `b_t` uses `a_t`.
    MetaStorm,
    /// EMA of squared gradients; `b_t` uses `a_{t+1}`.
    MetaStormSg,
}

/// State of the per-coordinate EMA variants.
#[derive(Debug, Clone, PartialEq)]
pub struct HeuristicState {
    pub variant: HeuristicVariant,
    pub run_seed: u64,
    pub t: u64,
    pub x: ParamVector,
    pub d: ParamVector,
    pub g_cached: ParamVector,
    /// EMA of `d_t^2` per coordinate.
    pub ema_d: ParamVector,
    /// EMA of squared gradients (SG) or squared gradient differences (MS).
    pub ema_g: ParamVector,
    /// Per-coordinate `a_t`.
    pub a_current: ParamVector,
    pub draw_index: u64,
    pub queries: u64,
    pub fault: Fault,
}

/// Per-coordinate summary of the heuristic coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoordinateRange {
    pub a_min: f64,
    pub a_max: f64,
    pub b_min: f64,
    pub b_max: f64,
}

/// What happened during one iteration `t -> t + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub t: u64,
    /// `a_{t+1}` (coordinate mean for heuristics).
    pub a_next: f64,
    /// Momentum value that entered `b_t`.
    pub a_for_b: f64,
    /// `b_t` (coordinate mean for heuristics).
    pub b: f64,
    /// `||d_t||`.
    pub d_norm: f64,
    /// Oracle calls made in this step.
    pub queries: u32,
    /// Increment added to the momentum accumulator: `s_t` such that
    /// `a_{t+1}^{-3/2} - a_t^{-3/2} = s_t / a0^2`.
    pub momentum_term: Option<f64>,
    /// `||grad f(x_t, xi_t)||^2`.
    pub grad_sample_sq: f64,
    /// `||grad f(x_t, xi_t) - grad f(x_t, xi_{t+1})||^2`, when both were
    /// queried.
    pub grad_diff_sq: Option<f64>,
    /// Key of `xi_{t+1}`.
    pub key: SampleKey,
    pub coordinates: Option<CoordinateRange>,
}

impl OptimizerState {
    pub(crate) fn next_key(&self) -> SampleKey {
        SampleKey::new(self.run_seed, self.draw_index)
    }
}

impl HeuristicState {
    pub(crate) fn next_key(&self) -> SampleKey {
        SampleKey::new(self.run_seed, self.draw_index)
    }
}

/// Freshly initialised state for either kind of algorithm.
#[derive(Debug, Clone, PartialEq)]
pub enum State {
    Scalar(OptimizerState),
    Heuristic(HeuristicState),
}

/// Samples `xi_1`, sets `d_1 = grad f(x_1, xi_1)` and validates `hp`.
///
/// `horizon` is the run length `T`; only the oracle-tuned baseline uses it.
pub fn init(
    problem: &Problem,
    algorithm: Algorithm,
    hp: &HyperParams,
    x1: ParamVector,
    run_seed: u64,
    horizon: u64,
) -> Result<State> {
    let violations = hp.violations(algorithm);
    if !violations.is_empty() {
        return Err(Error::Config(violations));
    }
    x1.check_dim(problem.dim())?;
    if !x1.is_finite() {
        return Err(Error::invalid("initial point must be finite"));
    }
    let key = SampleKey::new(run_seed, 0);
    let g1 = problem.grad_stochastic(&x1, key)?;
    if !g1.is_finite() {
        return Err(Error::Diverged {
            step: 0,
            what: "initial gradient",
        });
    }
    let dim = problem.dim();
    if algorithm.is_heuristic() {
        let variant = if algorithm == Algorithm::MetaStormH {
            HeuristicVariant::MetaStorm
        } else {
            HeuristicVariant::MetaStormSg
        };
        return Ok(State::Heuristic(HeuristicState {
            variant,
            run_seed,
            t: 1,
            x: x1,
            d: g1.clone(),
            g_cached: g1,
            ema_d: ParamVector::zeros(dim),
            ema_g: ParamVector::zeros(dim),
            a_current: ParamVector::filled(dim, 1.0),
            draw_index: 1,
            queries: 1,
            fault: Fault::None,
        }));
    }
    let oracle = if algorithm == Algorithm::OracleStorm {
        let f_star = problem.f_star.ok_or_else(|| {
            Error::Config(vec![format!(
                "oracle-storm needs a known optimal value; {} has none",
                problem.family_name()
            )])
        })?;
        let delta_f = problem.value_true(&x1)? - f_star;
        Some(oracle_tuned_constants(problem.beta, problem.sigma, horizon.max(1), delta_f)?)
    } else {
        None
    };
    Ok(State::Scalar(OptimizerState {
        algorithm,
        run_seed,
        t: 1,
        x: x1,
        d: g1.clone(),
        g_cached: g1,
        a_current: 1.0,
        d_sq_sum: CompensatedSum::new(),
        aux_sum: CompensatedSum::new(),
        momentum_sum: CompensatedSum::new(),
        draw_index: 1,
        queries: 1,
        oracle,
        fault: Fault::None,
    }))
}

/// `x - step * d`
#[inline]
pub(crate) fn descend(x: &ParamVector, step: f64, d: &ParamVector) -> ParamVector {
    x.iter().zip(d.iter()).map(|(xi, di)| xi - step * di).collect()
}

/// `g_new + (1 - a) (d - g_corr)`
#[inline]
pub(crate) fn storm_recursion(g_new: &ParamVector, a: f64, d: &ParamVector, g_corr: &ParamVector) -> ParamVector {
    let keep = 1.0 - a;
    g_new
        .iter()
        .zip(d.iter().zip(g_corr.iter()))
        .map(|(g, (di, c))| g + keep * (di - c))
        .collect()
}

pub(crate) fn ensure_finite(step: u64, what: &'static str, ok: bool) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Diverged { step, what })
    }
}
