//! Momentum coefficients `a_t`, step sizes `b_t` and hyperparameter presets.
//!
//! Every function here is pure. The optimizers own the running sums and call
//! into these formulas once per step.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower end of the admissible `p` range for META-STORM, `(3 - sqrt 7) / 2`.
pub fn meta_storm_p_min() -> f64 {
    (3.0 - 7f64.sqrt()) / 2.0
}

/// Strict lower bound on `a0` for META-STORM-NA.
pub fn na_a0_min() -> f64 {
    (2.0f64 / 3.0).sqrt()
}

/// Every optimizer the crate knows how to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    MetaStorm,
    MetaStormSg,
    MetaStormNa,
    /// Per-coordinate EMA variant of META-STORM.
    MetaStormH,
    /// Per-coordinate EMA variant of META-STORM-SG.
    MetaStormSgH,
    StormPlus,
    Sgd,
    AdaGradNorm,
    /// STORM with fixed `(a, b)` computed from the true problem constants.
    OracleStorm,
}

impl Algorithm {
    pub const ALL: [Algorithm; 9] = [
        Algorithm::MetaStorm,
        Algorithm::MetaStormSg,
        Algorithm::MetaStormNa,
        Algorithm::MetaStormH,
        Algorithm::MetaStormSgH,
        Algorithm::StormPlus,
        Algorithm::Sgd,
        Algorithm::AdaGradNorm,
        Algorithm::OracleStorm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::MetaStorm => "meta-storm",
            Algorithm::MetaStormSg => "meta-storm-sg",
            Algorithm::MetaStormNa => "meta-storm-na",
            Algorithm::MetaStormH => "meta-storm-h",
            Algorithm::MetaStormSgH => "meta-storm-sg-h",
            Algorithm::StormPlus => "storm-plus",
            Algorithm::Sgd => "sgd",
            Algorithm::AdaGradNorm => "adagrad-norm",
            Algorithm::OracleStorm => "oracle-storm",
        }
    }

    /// Algorithms that make two oracle calls per step.
    pub fn is_storm_family(self) -> bool {
        !matches!(self, Algorithm::Sgd | Algorithm::AdaGradNorm)
    }

    pub fn is_heuristic(self) -> bool {
        matches!(self, Algorithm::MetaStormH | Algorithm::MetaStormSgH)
    }

    /// Algorithms whose momentum follows an `a^{-3/2}` accumulator identity.
    pub fn has_momentum_identity(self) -> bool {
        matches!(
            self,
            Algorithm::MetaStorm | Algorithm::MetaStormSg | Algorithm::MetaStormNa | Algorithm::StormPlus
        )
    }

    /// Closed interval (or half-open for NA) of admissible `p`, if `p` is used.
    pub fn p_range(self) -> Option<(f64, f64, &'static str)> {
        match self {
            Algorithm::MetaStormSg => Some((0.25, 0.5, "[1/4, 1/2]")),
            Algorithm::MetaStorm => Some((meta_storm_p_min(), 0.5, "[(3-sqrt(7))/2, 1/2]")),
            Algorithm::MetaStormNa | Algorithm::MetaStormH | Algorithm::MetaStormSgH => {
                Some((0.0, 0.5, "(0, 1/2]"))
            }
            _ => None,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .iter()
            .copied()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Algorithm::ALL.iter().map(|a| a.name()).collect();
                Error::invalid(format!("unknown algorithm `{s}` (expected one of {})", names.join(", ")))
            })
    }
}

/// Scalar hyperparameters shared by all algorithms.
///
/// `q` is always derived as `(1 - p) / 2`; there is no way to set it directly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HyperParams {
    pub a0: f64,
    pub b0: f64,
    pub eta: f64,
    pub p: f64,
    q: f64,
    /// EMA decay, used by the per-coordinate variants only.
    pub alpha: f64,
}

impl HyperParams {
    /// Builds and validates hyperparameters for `algorithm`.
    pub fn new(algorithm: Algorithm, a0: f64, b0: f64, eta: f64, p: f64, alpha: f64) -> Result<Self> {
        let hp = Self::unchecked(a0, b0, eta, p, alpha);
        let violations = hp.violations(algorithm);
        if violations.is_empty() {
            Ok(hp)
        } else {
            Err(Error::Config(violations))
        }
    }

    pub(crate) fn unchecked(a0: f64, b0: f64, eta: f64, p: f64, alpha: f64) -> Self {
        Self {
            a0,
            b0,
            eta,
            p,
            q: (1.0 - p) / 2.0,
            alpha,
        }
    }

    /// Default parameters per algorithm. `dim` is the number of parameters,
    /// which STORM+ uses as its `a0`.
    pub fn preset(algorithm: Algorithm, dim: usize) -> Self {
        let (a0, b0, p, alpha) = match algorithm {
            Algorithm::MetaStorm => (1e8, 1e-8, 0.20, 0.0),
            Algorithm::MetaStormSg => (1e8, 1e-8, 0.25, 0.0),
            // not tabulated; shares META-STORM-SG's p and a0
            Algorithm::MetaStormNa => (1e8, 1e-8, 0.25, 0.0),
            Algorithm::MetaStormH | Algorithm::MetaStormSgH => (1.0, 1e-8, 0.50, 0.99),
            Algorithm::StormPlus => (dim as f64, 1.0, 0.5, 0.0),
            Algorithm::Sgd | Algorithm::OracleStorm => (1.0, 1.0, 0.5, 0.0),
            Algorithm::AdaGradNorm => (1.0, 1e-8, 0.5, 0.0),
        };
        Self::unchecked(a0, b0, 1.0, p, alpha)
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn with_eta(mut self, eta: f64) -> Self {
        self.eta = eta;
        self
    }

    pub fn with_p(mut self, p: f64) -> Self {
        self.p = p;
        self.q = (1.0 - p) / 2.0;
        self
    }

    /// All constraint violations for `algorithm`, empty when valid.
    pub fn violations(&self, algorithm: Algorithm) -> Vec<String> {
        let mut out = Vec::new();
        let name = algorithm.name();
        for (label, v) in [("a0", self.a0), ("b0", self.b0), ("eta", self.eta)] {
            if !(v.is_finite() && v > 0.0) {
                out.push(format!("{name}: {label} must be finite and > 0, got {v}"));
            }
        }
        if let Some((lo, hi, text)) = algorithm.p_range() {
            let open_low = matches!(
                algorithm,
                Algorithm::MetaStormNa | Algorithm::MetaStormH | Algorithm::MetaStormSgH
            );
            let ok = self.p.is_finite()
                && self.p <= hi
                && if open_low { self.p > lo } else { self.p >= lo };
            if !ok {
                out.push(format!("{name}: p must lie in {text}, got {}", self.p));
            }
        }
        if algorithm == Algorithm::MetaStormNa && !(self.a0 > na_a0_min()) {
            out.push(format!("{name}: a0 must exceed sqrt(2/3) ~ 0.8165, got {}", self.a0));
        }
        if algorithm.is_heuristic() && !(0.0..1.0).contains(&self.alpha) {
            out.push(format!("{name}: alpha must lie in [0, 1), got {}", self.alpha));
        }
        out
    }
}

fn check_sum(sum: f64, a0: f64) -> Result<()> {
    if !(sum.is_finite() && sum >= 0.0) {
        return Err(Error::invalid(format!("accumulator must be finite and >= 0, got {sum}")));
    }
    if !(a0 > 0.0) {
        return Err(Error::invalid(format!("a0 must be > 0, got {a0}")));
    }
    Ok(())
}

#[inline]
fn momentum_from(sum_over_a0_sq: f64) -> f64 {
    (1.0 + sum_over_a0_sq).powf(-2.0 / 3.0)
}

/// META-STORM-SG momentum from the running sum of squared stochastic
/// gradient norms.
pub fn momentum_sg(grad_sq_sum: f64, a0: f64) -> Result<f64> {
    check_sum(grad_sq_sum, a0)?;
    Ok(momentum_from(grad_sq_sum / (a0 * a0)))
}

/// META-STORM momentum from the running sum of squared differences of two
/// stochastic gradients taken at the same point.
pub fn momentum_ms(diff_sq_sum: f64, a0: f64) -> Result<f64> {
    check_sum(diff_sq_sum, a0)?;
    Ok(momentum_from(diff_sq_sum / (a0 * a0)))
}

/// META-STORM-NA momentum `a_{t+1}`, a function of the round only.
pub fn momentum_na(t: u64, a0: f64) -> Result<f64> {
    if !(a0 > na_a0_min()) {
        return Err(Error::invalid(format!("a0 must exceed sqrt(2/3), got {a0}")));
    }
    Ok(momentum_from(t as f64 / (a0 * a0)))
}

/// General step size `(b0^{1/p} + sum ||d||^2)^p / a^q`.
pub fn stepsize(d_sq_sum: f64, a: f64, hp: &HyperParams) -> Result<f64> {
    if !(a > 0.0) {
        return Err(Error::invalid(format!("momentum must be > 0, got {a}")));
    }
    if !(d_sq_sum.is_finite() && d_sq_sum >= 0.0) {
        return Err(Error::invalid(format!("accumulator must be finite and >= 0, got {d_sq_sum}")));
    }
    Ok(stepsize_unchecked(d_sq_sum, a, hp.b0, hp.p, hp.q))
}

#[inline]
pub(crate) fn stepsize_unchecked(d_sq_sum: f64, a: f64, b0: f64, p: f64, q: f64) -> f64 {
    (b0.powf(1.0 / p) + d_sq_sum).powf(p) / a.powf(q)
}

/// STORM+ step size: cube root of `sum ||d_i||^2 / a_{i+1}`.
pub fn stepsize_stormplus(weighted_d_sq_sum: f64) -> Result<f64> {
    if !(weighted_d_sq_sum >= 0.0) {
        return Err(Error::invalid(format!(
            "weighted accumulator must be >= 0, got {weighted_d_sq_sum}"
        )));
    }
    Ok(weighted_d_sq_sum.cbrt())
}

/// Fixed `(a, b)` of oracle-tuned STORM.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleConstants {
    pub a: f64,
    pub b: f64,
}

/// Non-adaptive choices from known problem constants:
/// `b = 2 sqrt(2) beta + beta^{2/3} delta_f^{-1/3} (sigma^2 T)^{1/3}` and
/// `a = min(1, 8 beta^2 / b^2)`.
pub fn oracle_tuned_constants(beta: f64, sigma: f64, big_t: u64, delta_f: f64) -> Result<OracleConstants> {
    if !(delta_f > 0.0) {
        return Err(Error::invalid(format!("F(x1) - F* must be > 0, got {delta_f}")));
    }
    if !(beta >= 0.0 && sigma >= 0.0) {
        return Err(Error::invalid("beta and sigma must be >= 0"));
    }
    if big_t == 0 {
        return Err(Error::invalid("T must be positive"));
    }
    let noise_term = beta.powf(2.0 / 3.0) * delta_f.powf(-1.0 / 3.0) * (sigma * sigma * big_t as f64).cbrt();
    let b = 2.0 * 2f64.sqrt() * beta + noise_term;
    if !(b > 0.0 && b.is_finite()) {
        return Err(Error::invalid(format!("degenerate step constant b = {b} (beta = {beta})")));
    }
    // b = 2 sqrt(2) beta exactly gives a = 1; avoid the rounding of sqrt(2)^2
    let a = if noise_term == 0.0 {
        1.0
    } else {
        (8.0 * beta * beta / (b * b)).min(1.0)
    };
    Ok(OracleConstants { a, b })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn momentum_sg_values() {
        assert_eq!(momentum_sg(0.0, 1.0).unwrap(), 1.0);
        assert!(close(momentum_sg(7.0, 1.0).unwrap(), 0.25, 1e-15));
        assert!(close(momentum_sg(63.0, 1.0).unwrap(), 0.0625, 1e-15));
        assert!(momentum_sg(-1.0, 1.0).is_err());
    }

    #[test]
    fn momentum_ms_values() {
        assert_eq!(momentum_ms(0.0, 1.0).unwrap(), 1.0);
        assert!(close(momentum_ms(7.0, 1.0).unwrap(), 0.25, 1e-15));
        assert!(momentum_ms(-0.5, 1.0).is_err());
    }

    #[test]
    fn momentum_na_values() {
        assert_eq!(momentum_na(0, 1.0).unwrap(), 1.0);
        assert!(close(momentum_na(7, 1.0).unwrap(), 0.25, 1e-15));
        assert!(momentum_na(3, 0.5).is_err());
        assert!(momentum_na(3, na_a0_min()).is_err());
        let seq: Vec<f64> = (0..50).map(|t| momentum_na(t, 1.3).unwrap()).collect();
        assert!(seq.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn stepsize_values() {
        let half = HyperParams::unchecked(1.0, 1.0, 1.0, 0.5, 0.0);
        assert_eq!(half.q(), 0.25);
        assert_eq!(stepsize(0.0, 1.0, &half).unwrap(), 1.0);
        assert!(close(stepsize(3.0, 1.0 / 16.0, &half).unwrap(), 4.0, 1e-15));
        let quarter = HyperParams::unchecked(1.0, 1.0, 1.0, 0.25, 0.0);
        assert_eq!(quarter.q(), 0.375);
        assert!(close(stepsize(15.0, 1.0, &quarter).unwrap(), 2.0, 1e-15));
        assert!(stepsize(1.0, 0.0, &half).is_err());
    }

    #[test]
    fn stepsize_half_is_adagrad_norm() {
        let hp = HyperParams::unchecked(1.0, 0.3, 1.0, 0.5, 0.0);
        for s in [0.0, 0.5, 10.0, 1234.5] {
            let adagrad = (hp.b0 * hp.b0 + s).sqrt();
            assert!(close(stepsize(s, 1.0, &hp).unwrap(), adagrad, 1e-15));
        }
    }

    #[test]
    fn stormplus_values() {
        assert_eq!(stepsize_stormplus(0.0).unwrap(), 0.0);
        assert_eq!(stepsize_stormplus(8.0).unwrap(), 2.0);
        assert_eq!(stepsize_stormplus(27.0).unwrap(), 3.0);
        assert!(stepsize_stormplus(-1.0).is_err());
    }

    #[test]
    fn oracle_constants() {
        let c = oracle_tuned_constants(2.0, 0.0, 1000, 1.0).unwrap();
        assert!(close(c.b, 4.0 * 2f64.sqrt(), 1e-15));
        assert_eq!(c.a, 1.0);

        let c = oracle_tuned_constants(1.0, 1.0, 1_000_000, 1.0).unwrap();
        let b = 2.0 * 2f64.sqrt() + 100.0;
        assert!(close(c.b, b, 1e-13), "{}", c.b);
        assert!(close(c.b, 102.828_427_124_746_19, 1e-12));
        assert!(close(c.a, 8.0 / (b * b), 1e-12));
        assert!((c.a - 7.566e-4).abs() < 1e-6);
        assert!(((c.a * c.b * c.b) - 8.0).abs() <= 1e-15 * 8.0);

        assert!(oracle_tuned_constants(1.0, 1.0, 10, 0.0).is_err());
        assert!(oracle_tuned_constants(0.0, 1.0, 10, 1.0).is_err());
    }

    #[test]
    fn constraint_checks() {
        assert!(HyperParams::new(Algorithm::MetaStormSg, 1.0, 1.0, 1.0, 0.1, 0.0).is_err());
        assert!(HyperParams::new(Algorithm::MetaStormSg, 1.0, 1.0, 1.0, 0.25, 0.0).is_ok());
        assert!(HyperParams::new(Algorithm::MetaStorm, 1.0, 1.0, 1.0, 0.17, 0.0).is_err());
        assert!(HyperParams::new(Algorithm::MetaStorm, 1.0, 1.0, 1.0, meta_storm_p_min(), 0.0).is_ok());
        assert!(HyperParams::new(Algorithm::MetaStormNa, 0.5, 1.0, 1.0, 0.3, 0.0).is_err());
        assert!(HyperParams::new(Algorithm::MetaStormNa, 1.0, 1.0, 1.0, 0.0, 0.0).is_err());
        assert!(HyperParams::new(Algorithm::MetaStormH, 1.0, 1e-8, 1.0, 0.5, 1.0).is_err());
        match HyperParams::new(Algorithm::MetaStormSg, -1.0, 0.0, 1.0, 0.9, 0.0) {
            Err(Error::Config(v)) => assert_eq!(v.len(), 3),
            other => panic!("unexpected {other:?}"),
        }
        for alg in Algorithm::ALL {
            let hp = HyperParams::preset(alg, 10);
            assert!(hp.violations(alg).is_empty(), "{alg}: {:?}", hp.violations(alg));
        }
    }

    #[test]
    fn algorithm_names_round_trip() {
        for alg in Algorithm::ALL {
            assert_eq!(alg.name().parse::<Algorithm>().unwrap(), alg);
        }
        assert!("adam".parse::<Algorithm>().is_err());
    }

    proptest! {
        #[test]
        fn q_is_derived(p in 0.01f64..0.5) {
            let hp = HyperParams::unchecked(1.0, 1.0, 1.0, 0.3, 0.0).with_p(p);
            prop_assert_eq!(hp.p + 2.0 * hp.q(), 1.0);
        }

        #[test]
        fn accumulator_identity(terms in prop::collection::vec(0.0f64..50.0, 1..60), a0 in 0.5f64..20.0) {
            let mut sum = 0.0;
            let mut prev = momentum_sg(0.0, a0).unwrap();
            for s in terms {
                sum += s;
                let next = momentum_sg(sum, a0).unwrap();
                prop_assert!(next <= prev && next > 0.0);
                let lhs = next.powf(-1.5) - prev.powf(-1.5);
                let rhs = s / (a0 * a0);
                prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + prev.powf(-1.5)));
                prev = next;
            }
        }

        #[test]
        fn stepsize_monotone(s1 in 0.0f64..1e3, ds in 0.0f64..1e3, a in 0.01f64..1.0, da in 0.0f64..0.5, p in 0.2f64..0.5) {
            let hp = HyperParams::unchecked(1.0, 1e-3, 1.0, p, 0.0);
            let a2 = (a + da).min(1.0);
            let b = stepsize(s1, a, &hp).unwrap();
            prop_assert!(b > 0.0);
            prop_assert!(stepsize(s1 + ds, a, &hp).unwrap() >= b);
            prop_assert!(stepsize(s1, a2, &hp).unwrap() <= b);
        }
    }
}
