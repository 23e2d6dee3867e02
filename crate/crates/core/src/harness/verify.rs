//! Built-in verification suite: short traces of every algorithm on every
//! problem family, checked by the diagnostics verifiers.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::diagnostics::{
    aggregate, momentum_identity_from_trace, verify_ema_closed_form, verify_momentum_identity, verify_recursion,
    verify_step_indexing,
};
use crate::error::{Error, Result};
use crate::numeric::ParamVector;
use crate::optimizers::{run_with, Fault, HeuristicVariant, Optimizer, RunOptions, RunResult};
use crate::problems::{gradient_check, Problem, ProblemSpec};
use crate::schedules::{Algorithm, HyperParams};

use super::execute::pool;

pub const MOMENTUM_TOL: f64 = 1e-10;
pub const RECURSION_TOL: f64 = 1e-14;
pub const STEP_TOL: f64 = 1e-12;
pub const EMA_TOL: f64 = 1e-12;
pub const GRAD_CHECK_TOL: f64 = 1e-5;
pub const ADAGRAD_REL_TOL: f64 = 1e-12;

/// Deliberate defects for exercising the verifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum VerifyFault {
    /// The estimator recursion uses `a_t` in place of `a_{t+1}`.
    MisindexedA,
    /// The logged momentum sequence is shifted by one step before checking.
    ShiftedA,
}

impl VerifyFault {
    pub fn name(self) -> &'static str {
        match self {
            VerifyFault::MisindexedA => "misindexed-a",
            VerifyFault::ShiftedA => "shifted-a",
        }
    }
}

impl fmt::Display for VerifyFault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VerifyFault {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "misindexed-a" => Ok(VerifyFault::MisindexedA),
            "shifted-a" => Ok(VerifyFault::ShiftedA),
            other => Err(Error::invalid(format!(
                "unknown fault `{other}` (expected misindexed-a or shifted-a)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub big_t: u64,
    pub seed: u64,
    pub fault: Option<VerifyFault>,
    pub jobs: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            big_t: 500,
            seed: 0,
            fault: None,
            jobs: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub subject: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    /// Passes when `value <= tolerance`.
    fn at_most(name: &'static str, subject: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self {
            name,
            subject: subject.into(),
            value,
            tolerance,
            passed: value <= tolerance,
        }
    }

    fn flag(name: &'static str, subject: impl Into<String>, ok: bool) -> Self {
        Self {
            name,
            subject: subject.into(),
            value: if ok { 0.0 } else { 1.0 },
            tolerance: 0.0,
            passed: ok,
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<22} {:<34} {:.3e} (tol {:.0e})",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.subject,
            self.value,
            self.tolerance
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub fault: Option<VerifyFault>,
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<String> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.to_string()).collect()
    }

    /// `Ok` when every check passed, otherwise a verification error that
    /// enumerates the failures.
    pub fn into_result(self) -> Result<Self> {
        if self.passed() {
            Ok(self)
        } else {
            Err(Error::Verification(self.failures()))
        }
    }
}

/// The problem instances the suite runs on, one per family.
pub fn verify_problems() -> Vec<ProblemSpec> {
    vec![
        ProblemSpec::NoisyQuadratic {
            dim: 5,
            noise: 1.0,
            spectrum: None,
            min_eig: 0.5,
            max_eig: 2.0,
        },
        ProblemSpec::LeastSquares {
            dim: 5,
            rows: 100,
            noise: 0.1,
            data_seed: 1,
        },
        ProblemSpec::Logistic {
            dim: 5,
            samples: 100,
            flip_prob: 0.1,
            reg: 0.1,
            data_seed: 2,
        },
    ]
}

/// Presets with `a0 = 1` for the scalar adaptive methods, so momentum
/// actually moves within a short trace, and a conservative `eta`.
pub fn verify_hyper(algorithm: Algorithm, dim: usize) -> HyperParams {
    let preset = HyperParams::preset(algorithm, dim);
    let a0 = match algorithm {
        Algorithm::MetaStorm | Algorithm::MetaStormSg | Algorithm::MetaStormNa => 1.0,
        _ => preset.a0,
    };
    HyperParams::unchecked(a0, preset.b0, 0.1, preset.p, preset.alpha)
}

/// Distance between two finite doubles in units in the last place.
pub fn ulp_distance(a: f64, b: f64) -> u64 {
    fn ordered(x: f64) -> i128 {
        let bits = x.to_bits() as i64;
        if bits < 0 {
            i64::MIN as i128 - bits as i128
        } else {
            bits as i128
        }
    }
    (ordered(a) - ordered(b)).unsigned_abs() as u64
}

/// Result of stepping META-STORM (`p = 1/2`) and AdaGrad-Norm side by side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Equivalence {
    /// Largest per-coordinate ulp distance between the iterates at any step.
    pub max_ulps: u64,
    /// Largest `||x_ms - x_ada|| / ||x_ada||` over steps.
    pub max_rel: f64,
}

/// On a noise-free problem META-STORM with `p = 1/2` has `a_t = 1` and
/// `d_t = grad F(x_t)`, so its step size reduces to AdaGrad-Norm's.
pub fn adagrad_equivalence(problem: &Problem, x1: &ParamVector, eta: f64, b0: f64, big_t: u64) -> Result<Equivalence> {
    let ms_hp = HyperParams::new(Algorithm::MetaStorm, 1.0, b0, eta, 0.5, 0.0)?;
    let ada_hp = HyperParams::new(Algorithm::AdaGradNorm, 1.0, b0, eta, 0.5, 0.0)?;
    let mut ms = Optimizer::new(problem, Algorithm::MetaStorm, ms_hp, x1.clone(), 0, big_t)?;
    let mut ada = Optimizer::new(problem, Algorithm::AdaGradNorm, ada_hp, x1.clone(), 0, big_t)?;
    let mut out = Equivalence { max_ulps: 0, max_rel: 0.0 };
    for _ in 1..big_t {
        ms.step(problem)?;
        ada.step(problem)?;
        for (a, b) in ms.x().iter().zip(ada.x().iter()) {
            out.max_ulps = out.max_ulps.max(ulp_distance(*a, *b));
        }
        let rel = ms.x().sub(ada.x()).norm() / ada.x().norm().max(f64::MIN_POSITIVE);
        out.max_rel = out.max_rel.max(rel);
    }
    Ok(out)
}

fn shifted(a: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len());
    out.push(1.0);
    out.extend_from_slice(&a[..a.len().saturating_sub(1)]);
    out
}

fn checks_for_run(problem: &Problem, algorithm: Algorithm, hp: &HyperParams, r: &RunResult, fault: Option<VerifyFault>) -> Result<Vec<Check>> {
    let subject = format!("{algorithm} on {}", problem.family_name());
    let mut checks = vec![Check::flag("finite", &subject, !r.diverged())];
    if r.diverged() {
        return Ok(checks);
    }
    let expected_queries = if algorithm.is_storm_family() { 2 * r.big_t - 1 } else { r.big_t };
    checks.push(Check::flag("query count", &subject, r.queries == expected_queries));
    let increasing = r.trace.windows(2).all(|w| w[0].queries_cum < w[1].queries_cum);
    checks.push(Check::flag("queries increasing", &subject, increasing));
    let triangle = r.trace.iter().all(|row| match (row.eps_norm, row.grad_true_norm) {
        (Some(e), Some(g)) => e <= (row.d_norm + g) * (1.0 + 1e-12),
        _ => true,
    });
    checks.push(Check::flag("triangle", &subject, triangle));

    let stats = aggregate(&r.trace)?;
    if let (Some(h), Some(e)) = (stats.h_t, stats.e_t) {
        let bound = 2.0 * stats.d_t + 2.0 * e;
        let excess = ((h - bound) / bound.max(f64::MIN_POSITIVE)).max(0.0);
        checks.push(Check::at_most("decomposition", &subject, excess, 1e-12));
    }

    checks.push(Check::at_most("recursion", &subject, verify_recursion(&r.states, problem)?, RECURSION_TOL));

    if algorithm.has_momentum_identity() {
        let residual = match fault {
            Some(VerifyFault::ShiftedA) => {
                let a: Vec<f64> = r.trace.iter().filter_map(|row| row.a).collect();
                let terms: Vec<f64> = r.trace.iter().filter_map(|row| row.momentum_term).collect();
                verify_momentum_identity(&shifted(&a), &terms, hp.a0)
            }
            _ => momentum_identity_from_trace(&r.trace, hp.a0)?,
        };
        checks.push(Check::at_most("momentum identity", &subject, residual, MOMENTUM_TOL));
    }
    if matches!(
        algorithm,
        Algorithm::MetaStorm | Algorithm::MetaStormSg | Algorithm::MetaStormNa | Algorithm::StormPlus | Algorithm::AdaGradNorm
    ) {
        checks.push(Check::at_most(
            "step-size indexing",
            &subject,
            verify_step_indexing(&r.trace, algorithm, hp)?,
            STEP_TOL,
        ));
    }
    let variant = match algorithm {
        Algorithm::MetaStormH => Some(HeuristicVariant::MetaStorm),
        Algorithm::MetaStormSgH => Some(HeuristicVariant::MetaStormSg),
        _ => None,
    };
    if let Some(variant) = variant {
        checks.push(Check::at_most(
            "ema closed form",
            &subject,
            verify_ema_closed_form(&r.states, problem, variant, hp.alpha)?,
            EMA_TOL,
        ));
    }
    Ok(checks)
}

/// Runs the suite. Returns the report whether or not checks pass; use
/// [`VerifyReport::into_result`] to turn failures into an error.
pub fn verify(opts: &VerifyOptions) -> Result<VerifyReport> {
    if opts.big_t < 2 {
        return Err(Error::invalid("verification needs T >= 2"));
    }
    let problems: Vec<Problem> = verify_problems().iter().map(ProblemSpec::build).collect::<Result<_>>()?;
    let mut cases = Vec::new();
    for (pi, problem) in problems.iter().enumerate() {
        for alg in Algorithm::ALL {
            if alg == Algorithm::OracleStorm && problem.f_star.is_none() {
                continue;
            }
            cases.push((pi, alg));
        }
    }
    let run_fault = match opts.fault {
        Some(VerifyFault::MisindexedA) => Fault::MisindexedMomentum,
        _ => Fault::None,
    };
    let per_case: Vec<Vec<Check>> = pool(opts.jobs)?.install(|| {
        cases
            .par_iter()
            .map(|&(pi, alg)| {
                let problem = &problems[pi];
                let hp = verify_hyper(alg, problem.dim());
                let run_opts = RunOptions::new(opts.big_t).trace_every(1).log_states(true).fault(run_fault);
                let x1 = ParamVector::filled(problem.dim(), 1.0);
                let r = run_with(problem, alg, hp, x1, opts.seed, run_opts)?;
                checks_for_run(problem, alg, &hp, &r, opts.fault)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut checks: Vec<Check> = per_case.into_iter().flatten().collect();

    for problem in &problems {
        checks.push(Check::at_most(
            "gradient check",
            problem.family_name(),
            gradient_check(problem, 20, opts.seed)?,
            GRAD_CHECK_TOL,
        ));
    }

    let noiseless = Problem::noisy_quadratic(vec![0.5, 0.8, 1.0, 1.5, 2.0], 0.0)?;
    let x1 = ParamVector::filled(5, 1.0);
    let eq = adagrad_equivalence(&noiseless, &x1, 0.5, 1e-8, opts.big_t)?;
    checks.push(Check::at_most("adagrad equivalence", "ulps per coordinate", eq.max_ulps as f64, 1.0));
    checks.push(Check::at_most("adagrad equivalence", "relative deviation", eq.max_rel, ADAGRAD_REL_TOL));

    let hp = HyperParams::preset(Algorithm::MetaStorm, 5);
    let r = run_with(&noiseless, Algorithm::MetaStorm, hp, x1, opts.seed, RunOptions::new(opts.big_t).trace_every(1))?;
    let degenerate = !r.diverged()
        && r.trace.iter().all(|row| row.a.is_none_or(|a| a == 1.0) && row.eps_norm == Some(0.0));
    checks.push(Check::flag("noise-free degeneracy", "meta-storm", degenerate));

    Ok(VerifyReport {
        fault: opts.fault,
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fault_names_round_trip() {
        for f in [VerifyFault::MisindexedA, VerifyFault::ShiftedA] {
            assert_eq!(f.name().parse::<VerifyFault>().unwrap(), f);
        }
        assert!("off-by-two".parse::<VerifyFault>().is_err());
    }

    #[test]
    fn ulp_distance_basics() {
        assert_eq!(ulp_distance(1.0, 1.0), 0);
        assert_eq!(ulp_distance(1.0, f64::from_bits(1.0f64.to_bits() + 1)), 1);
        assert_eq!(ulp_distance(0.0, -0.0), 0);
        assert_eq!(ulp_distance(f64::from_bits(1), -f64::from_bits(1)), 2);
    }

    #[test]
    fn clean_suite_passes() {
        let report = verify(&VerifyOptions::default()).unwrap();
        assert!(report.passed(), "{:#?}", report.failures());
        let names: Vec<_> = report.checks.iter().map(|c| c.name).collect();
        for needed in ["recursion", "momentum identity", "ema closed form", "adagrad equivalence", "gradient check"] {
            assert!(names.contains(&needed), "missing {needed}");
        }
    }

    #[test]
    fn misindexed_momentum_fails_recursion() {
        let opts = VerifyOptions {
            fault: Some(VerifyFault::MisindexedA),
            ..VerifyOptions::default()
        };
        let report = verify(&opts).unwrap();
        assert!(report
            .checks
            .iter()
            .any(|c| c.name == "recursion" && !c.passed && c.value > 1e-6));
        assert_eq!(report.into_result().unwrap_err().exit_code(), 2);
    }

    #[test]
    fn shifted_momentum_fails_identity() {
        let opts = VerifyOptions {
            fault: Some(VerifyFault::ShiftedA),
            ..VerifyOptions::default()
        };
        let report = verify(&opts).unwrap();
        let identity: Vec<_> = report.checks.iter().filter(|c| c.name == "momentum identity").collect();
        assert!(!identity.is_empty());
        assert!(identity.iter().all(|c| !c.passed && c.value > 1e-3), "{identity:#?}");
    }
}
