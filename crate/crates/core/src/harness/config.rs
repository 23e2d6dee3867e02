//! Experiment configuration: one TOML document per experiment.
//!
//! ```toml
//! algorithm = "meta-storm"
//! T = 10000
//! etas = [0.1, 1.0]
//! seeds = [0, 1, 2]
//!
//! [problem]
//! family = "noisy-quadratic"
//! dim = 20
//! noise = 1.0
//!
//! [hyper]      # optional overrides of the algorithm's preset
//! p = 0.3
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::optimizers::default_trace_every;
use crate::problems::ProblemSpec;
use crate::schedules::{Algorithm, HyperParams};

pub const DEFAULT_T: u64 = 1000;
pub const DEFAULT_OUTPUT: &str = "out";

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHyper {
    a0: Option<f64>,
    b0: Option<f64>,
    p: Option<f64>,
    alpha: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    problem: toml::Value,
    algorithm: String,
    #[serde(default)]
    hyper: RawHyper,
    etas: Option<Vec<f64>>,
    #[serde(rename = "T")]
    big_t: Option<u64>,
    seeds: Option<Vec<u64>>,
    trace_every: Option<u64>,
    output: Option<PathBuf>,
    x1: Option<Vec<f64>>,
}

/// A fully resolved experiment. Every default is expanded so the serialized
/// form reproduces the experiment on its own.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub problem: ProblemSpec,
    pub algorithm: Algorithm,
    /// Preset merged with overrides. The `eta` inside is ignored; the grid
    /// below is used instead.
    #[serde(serialize_with = "hyper_echo")]
    pub hyper: HyperParams,
    pub etas: Vec<f64>,
    #[serde(rename = "T")]
    pub big_t: u64,
    pub seeds: Vec<u64>,
    pub trace_every: u64,
    pub output: PathBuf,
    /// Starting point.
    pub x1: Vec<f64>,
}

#[derive(Serialize)]
struct HyperEcho {
    a0: f64,
    b0: f64,
    p: f64,
    q: f64,
    alpha: f64,
}

fn hyper_echo<S: Serializer>(hp: &HyperParams, s: S) -> std::result::Result<S::Ok, S::Error> {
    HyperEcho {
        a0: hp.a0,
        b0: hp.b0,
        p: hp.p,
        q: hp.q(),
        alpha: hp.alpha,
    }
    .serialize(s)
}

fn problem_dim(spec: &ProblemSpec) -> usize {
    match spec {
        ProblemSpec::NoisyQuadratic { dim, .. }
        | ProblemSpec::LeastSquares { dim, .. }
        | ProblemSpec::Logistic { dim, .. } => *dim,
    }
}

impl RunConfig {
    /// Defaults for everything but the problem and the algorithm: preset
    /// hyperparameters, `eta = 1`, `T = 1000`, seed 0, `x1 = (1, ..., 1)`.
    pub fn new(problem: ProblemSpec, algorithm: Algorithm) -> Self {
        let dim = problem_dim(&problem);
        Self {
            hyper: HyperParams::preset(algorithm, dim),
            problem,
            algorithm,
            etas: vec![1.0],
            big_t: DEFAULT_T,
            seeds: vec![0],
            trace_every: default_trace_every(DEFAULT_T),
            output: PathBuf::from(DEFAULT_OUTPUT),
            x1: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        problem_dim(&self.problem)
    }

    /// Hyperparameters of one grid point.
    pub fn hyper_for(&self, eta: f64) -> HyperParams {
        self.hyper.with_eta(eta)
    }

    /// Every constraint violation, empty when the config can run.
    pub fn violations(&self) -> Vec<String> {
        let mut out = self.problem.violations();
        if self.etas.is_empty() {
            out.push("etas: eta grid must not be empty".into());
        }
        for &eta in &self.etas {
            let hp = self.hyper_for(eta);
            for v in hp.violations(self.algorithm) {
                if !out.contains(&v) {
                    out.push(v);
                }
            }
        }
        if self.etas.is_empty() {
            out.extend(self.hyper_for(1.0).violations(self.algorithm));
        }
        if self.big_t == 0 {
            out.push("T must be at least 1".into());
        }
        if self.seeds.is_empty() {
            out.push("seeds must not be empty".into());
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            out.push("seeds must be distinct".into());
        }
        if self.trace_every == 0 {
            out.push("trace_every must be at least 1".into());
        }
        if self.x1.len() != self.dim() {
            out.push(format!("x1 has {} entries, problem dim is {}", self.x1.len(), self.dim()));
        }
        if self.x1.iter().any(|v| !v.is_finite()) {
            out.push("x1 must be finite".into());
        }
        let mut etas = self.etas.clone();
        etas.sort_by(f64::total_cmp);
        if etas.windows(2).any(|w| w[0] == w[1]) {
            out.push("etas must be distinct".into());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }

    pub fn with_seed_offset(mut self, offset: u64) -> Self {
        for s in &mut self.seeds {
            *s = s.wrapping_add(offset);
        }
        self
    }
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text)
}

/// Parses and validates a config document, reporting all problems found.
pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(vec![format!("malformed config: {e}")]))?;
    let mut errors = Vec::new();

    let algorithm = match raw.algorithm.parse::<Algorithm>() {
        Ok(a) => Some(a),
        Err(e) => {
            errors.push(match e {
                Error::InvalidArgument(m) => m,
                other => other.to_string(),
            });
            None
        }
    };
    let problem = match raw.problem.try_into::<ProblemSpec>() {
        Ok(p) => Some(p),
        Err(e) => {
            errors.push(format!("problem: {}", e.to_string().trim()));
            None
        }
    };
    let (Some(algorithm), Some(problem)) = (algorithm, problem) else {
        return Err(Error::Config(errors));
    };

    let mut config = RunConfig::new(problem, algorithm);
    let preset = config.hyper;
    config.hyper = HyperParams::unchecked(
        raw.hyper.a0.unwrap_or(preset.a0),
        raw.hyper.b0.unwrap_or(preset.b0),
        1.0,
        raw.hyper.p.unwrap_or(preset.p),
        raw.hyper.alpha.unwrap_or(preset.alpha),
    );
    if let Some(etas) = raw.etas {
        config.etas = etas;
    }
    if let Some(t) = raw.big_t {
        config.big_t = t;
        config.trace_every = default_trace_every(t);
    }
    if let Some(every) = raw.trace_every {
        config.trace_every = every;
    }
    if let Some(seeds) = raw.seeds {
        config.seeds = seeds;
    }
    if let Some(out) = raw.output {
        config.output = out;
    }
    if let Some(x1) = raw.x1 {
        config.x1 = x1;
    }
    errors.extend(config.violations());
    if errors.is_empty() {
        Ok(config)
    } else {
        Err(Error::Config(errors))
    }
}
