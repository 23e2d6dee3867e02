//! Synthetic stochastic first-order oracles with known (or estimated)
//! smoothness, noise level and optimal value.
//!
//! Each problem exposes a stochastic gradient `grad_f(x, key)` whose
//! expectation over keys is `grad_F(x)`. The same key always denotes the same
//! sample, so a gradient can be evaluated at two points with one draw.

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{ParamVector, SampleKey};

/// Per-coordinate truncation of the Gaussian noise, in units of the noise
/// scale. Symmetric truncation keeps the noise exactly mean-zero.
pub const NOISE_TRUNCATION: f64 = 6.0;

/// Safety factor applied to numerically estimated constants.
pub const ESTIMATE_MARGIN: f64 = 1.05;

/// Probes used when a family's constants are estimated at construction.
const CONSTRUCTION_PROBES: usize = 2_000;

/// Serializable description of a problem instance. Everything random about
/// the instance is derived from `data_seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProblemSpec {
    /// `F(x) = 1/2 x^T diag(spectrum) x`, gradient noise `noise * u` with `u`
    /// a truncated standard Gaussian vector.
    NoisyQuadratic {
        dim: usize,
        #[serde(default = "one")]
        noise: f64,
        /// Explicit diagonal. When absent, `dim` values log-spaced between
        /// `min_eig` and `max_eig`.
        #[serde(default)]
        spectrum: Option<Vec<f64>>,
        #[serde(default = "one")]
        min_eig: f64,
        #[serde(default = "one")]
        max_eig: f64,
    },
    /// `F(x) = 1/(2n) ||Mx - y||^2` with one row sampled per draw.
    LeastSquares {
        dim: usize,
        #[serde(default = "default_rows")]
        rows: usize,
        /// Standard deviation of the target perturbation; zero gives a
        /// consistent system.
        #[serde(default = "default_ls_noise")]
        noise: f64,
        #[serde(default)]
        data_seed: u64,
    },
    /// Logistic loss on synthetic linearly separable data with flipped labels,
    /// plus `reg * sum x_i^2 / (1 + x_i^2)`.
    Logistic {
        dim: usize,
        #[serde(default = "default_rows")]
        samples: usize,
        #[serde(default = "default_flip")]
        flip_prob: f64,
        #[serde(default = "default_reg")]
        reg: f64,
        #[serde(default)]
        data_seed: u64,
    },
}

fn one() -> f64 {
    1.0
}
fn default_rows() -> usize {
    200
}
fn default_ls_noise() -> f64 {
    0.1
}
fn default_flip() -> f64 {
    0.1
}
fn default_reg() -> f64 {
    0.1
}

impl ProblemSpec {
    pub fn family_name(&self) -> &'static str {
        match self {
            ProblemSpec::NoisyQuadratic { .. } => "noisy-quadratic",
            ProblemSpec::LeastSquares { .. } => "least-squares",
            ProblemSpec::Logistic { .. } => "logistic",
        }
    }

    /// All parameter violations, empty when the spec is buildable.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut need = |ok: bool, msg: String| {
            if !ok {
                out.push(msg)
            }
        };
        match self {
            ProblemSpec::NoisyQuadratic {
                dim,
                noise,
                spectrum,
                min_eig,
                max_eig,
            } => {
                need(*dim > 0, "noisy-quadratic: dim must be positive".into());
                need(
                    noise.is_finite() && *noise >= 0.0,
                    format!("noisy-quadratic: noise must be >= 0, got {noise}"),
                );
                match spectrum {
                    Some(s) => {
                        need(
                            s.len() == *dim,
                            format!("noisy-quadratic: spectrum has {} entries, dim is {dim}", s.len()),
                        );
                        need(
                            s.iter().all(|v| v.is_finite() && *v >= 0.0),
                            "noisy-quadratic: spectrum entries must be finite and >= 0".into(),
                        );
                    }
                    None => need(
                        *min_eig > 0.0 && max_eig >= min_eig && max_eig.is_finite(),
                        format!("noisy-quadratic: need 0 < min_eig <= max_eig, got {min_eig}, {max_eig}"),
                    ),
                }
            }
            ProblemSpec::LeastSquares { dim, rows, noise, .. } => {
                need(*dim > 0, "least-squares: dim must be positive".into());
                need(*rows >= *dim, format!("least-squares: need rows >= dim, got {rows} < {dim}"));
                need(
                    noise.is_finite() && *noise >= 0.0,
                    format!("least-squares: noise must be >= 0, got {noise}"),
                );
            }
            ProblemSpec::Logistic {
                dim,
                samples,
                flip_prob,
                reg,
                ..
            } => {
                need(*dim > 0, "logistic: dim must be positive".into());
                need(*samples > 0, "logistic: samples must be positive".into());
                need(
                    (0.0..=0.5).contains(flip_prob),
                    format!("logistic: flip_prob must lie in [0, 0.5], got {flip_prob}"),
                );
                need(reg.is_finite() && *reg >= 0.0, format!("logistic: reg must be >= 0, got {reg}"));
            }
        }
        out
    }

    pub fn build(&self) -> Result<Problem> {
        let v = self.violations();
        if !v.is_empty() {
            return Err(Error::Config(v));
        }
        Ok(match self {
            ProblemSpec::NoisyQuadratic {
                dim,
                noise,
                spectrum,
                min_eig,
                max_eig,
            } => {
                let spectrum = spectrum.clone().unwrap_or_else(|| log_spaced(*min_eig, *max_eig, *dim));
                Problem::noisy_quadratic(spectrum, *noise)?
            }
            ProblemSpec::LeastSquares {
                dim,
                rows,
                noise,
                data_seed,
            } => Problem::least_squares_synthetic(*dim, *rows, *noise, *data_seed)?,
            ProblemSpec::Logistic {
                dim,
                samples,
                flip_prob,
                reg,
                data_seed,
            } => Problem::logistic_synthetic(*dim, *samples, *flip_prob, *reg, *data_seed)?,
        })
    }
}

fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 || lo == hi {
        return vec![hi; n];
    }
    let (llo, lhi) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| {
            if i == n - 1 {
                hi
            } else {
                (llo + (lhi - llo) * i as f64 / (n - 1) as f64).exp()
            }
        })
        .collect()
}

/// Whether a constant is known analytically or was estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Exact,
    Estimated,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProblemKind {
    NoisyQuadratic {
        spectrum: Vec<f64>,
        noise: f64,
    },
    LeastSquares {
        /// Row-major, `rows x dim`.
        matrix: Vec<f64>,
        targets: Vec<f64>,
    },
    Logistic {
        /// Row-major, `samples x dim`.
        features: Vec<f64>,
        labels: Vec<f64>,
        reg: f64,
    },
}

/// A stochastic oracle together with its problem constants.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    dim: usize,
    /// Averaged smoothness constant.
    pub beta: f64,
    /// Bound on `sqrt(E ||grad_f - grad_F||^2)`.
    pub sigma: f64,
    /// Infimum of `F` when known.
    pub f_star: Option<f64>,
    /// Half the bound on `||grad_f(x, xi) - grad_f(x, xi')||`, where one exists.
    pub sigma_hat: Option<f64>,
    pub beta_provenance: Provenance,
    pub sigma_provenance: Provenance,
    /// Half-width of the box `[-r, r]^dim` used for probing constants.
    pub probe_radius: f64,
    kind: ProblemKind,
}

impl Problem {
    /// Diagonal quadratic with additive truncated-Gaussian gradient noise.
    ///
    /// `noise` is the per-coordinate scale, so `sigma = noise * sqrt(dim)`.
    pub fn noisy_quadratic(spectrum: Vec<f64>, noise: f64) -> Result<Self> {
        if spectrum.is_empty() {
            return Err(Error::invalid("spectrum must be non-empty"));
        }
        if !spectrum.iter().all(|v| v.is_finite() && *v >= 0.0) || !(noise >= 0.0 && noise.is_finite()) {
            return Err(Error::invalid("spectrum and noise must be finite and >= 0"));
        }
        let dim = spectrum.len();
        let beta = spectrum.iter().copied().fold(0.0, f64::max);
        let root_dim = (dim as f64).sqrt();
        Ok(Self {
            dim,
            beta,
            sigma: noise * root_dim,
            f_star: Some(0.0),
            sigma_hat: Some(NOISE_TRUNCATION * noise * root_dim),
            beta_provenance: Provenance::Exact,
            sigma_provenance: Provenance::Exact,
            probe_radius: 1.0,
            kind: ProblemKind::NoisyQuadratic { spectrum, noise },
        })
    }

    /// Row-sampled least squares on explicit data.
    ///
    /// `beta = max_i ||m_i||^2`, which bounds every per-row gradient
    /// difference. `sigma` is estimated over the probe box.
    pub fn least_squares(matrix: Vec<f64>, targets: Vec<f64>, dim: usize) -> Result<Self> {
        let rows = targets.len();
        if dim == 0 || rows == 0 || matrix.len() != rows * dim {
            return Err(Error::invalid(format!(
                "least-squares: matrix has {} entries, expected {rows} x {dim}",
                matrix.len()
            )));
        }
        let beta = matrix
            .chunks_exact(dim)
            .map(|r| r.iter().map(|v| v * v).sum::<f64>())
            .fold(0.0, f64::max);
        let mut p = Self {
            dim,
            beta,
            sigma: 0.0,
            f_star: None,
            sigma_hat: None,
            beta_provenance: Provenance::Exact,
            sigma_provenance: Provenance::Estimated,
            probe_radius: 2.0,
            kind: ProblemKind::LeastSquares { matrix, targets },
        };
        if let Some(x_star) = p.least_squares_solution() {
            let f = p.value_true(&x_star)?;
            p.f_star = Some(f.max(0.0));
        }
        let (_, sigma_hat) = estimate_constants(&p, CONSTRUCTION_PROBES, 0x5157)?;
        p.sigma = ESTIMATE_MARGIN * sigma_hat;
        Ok(p)
    }

    /// Gaussian design, targets `M x_true + noise * N(0, 1)`.
    pub fn least_squares_synthetic(dim: usize, rows: usize, noise: f64, data_seed: u64) -> Result<Self> {
        let mut rng = SampleKey::auxiliary(data_seed, PURPOSE_DATA);
        let scale = 1.0 / (dim as f64).sqrt();
        let matrix: Vec<f64> = (0..rows * dim).map(|_| scale * normal(&mut rng)).collect();
        let x_true: Vec<f64> = (0..dim).map(|_| normal(&mut rng)).collect();
        let targets = matrix
            .chunks_exact(dim)
            .map(|r| dot(r, &x_true) + noise * normal(&mut rng))
            .collect();
        Self::least_squares(matrix, targets, dim)
    }

    /// Logistic loss plus the bounded non-convex penalty on explicit data.
    /// Labels must be `+1` or `-1`. Both constants are estimated.
    pub fn logistic(features: Vec<f64>, labels: Vec<f64>, reg: f64, dim: usize) -> Result<Self> {
        let n = labels.len();
        if dim == 0 || n == 0 || features.len() != n * dim {
            return Err(Error::invalid(format!(
                "logistic: features have {} entries, expected {n} x {dim}",
                features.len()
            )));
        }
        if labels.iter().any(|&y| y != 1.0 && y != -1.0) {
            return Err(Error::invalid("logistic: labels must be +1 or -1"));
        }
        let mut p = Self {
            dim,
            beta: 0.0,
            sigma: 0.0,
            f_star: None,
            sigma_hat: None,
            beta_provenance: Provenance::Estimated,
            sigma_provenance: Provenance::Estimated,
            probe_radius: 2.0,
            kind: ProblemKind::Logistic { features, labels, reg },
        };
        let (beta_hat, sigma_hat) = estimate_constants(&p, CONSTRUCTION_PROBES, 0x1061)?;
        p.beta = ESTIMATE_MARGIN * beta_hat;
        p.sigma = ESTIMATE_MARGIN * sigma_hat;
        Ok(p)
    }

    pub fn logistic_synthetic(dim: usize, samples: usize, flip_prob: f64, reg: f64, data_seed: u64) -> Result<Self> {
        let mut rng = SampleKey::auxiliary(data_seed, PURPOSE_DATA);
        let w: Vec<f64> = (0..dim).map(|_| normal(&mut rng)).collect();
        let mut features = Vec::with_capacity(samples * dim);
        let mut labels = Vec::with_capacity(samples);
        for _ in 0..samples {
            let z: Vec<f64> = (0..dim).map(|_| normal(&mut rng)).collect();
            let mut y = if dot(&z, &w) >= 0.0 { 1.0 } else { -1.0 };
            if rng.random::<f64>() < flip_prob {
                y = -y;
            }
            features.extend(z);
            labels.push(y);
        }
        Self::logistic(features, labels, reg, dim)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &ProblemKind {
        &self.kind
    }

    pub fn family_name(&self) -> &'static str {
        match self.kind {
            ProblemKind::NoisyQuadratic { .. } => "noisy-quadratic",
            ProblemKind::LeastSquares { .. } => "least-squares",
            ProblemKind::Logistic { .. } => "logistic",
        }
    }

    /// True when every sample gradient is `beta`-Lipschitz, not just on
    /// average.
    pub fn per_sample_smooth(&self) -> bool {
        !matches!(self.kind, ProblemKind::Logistic { .. })
    }

    /// Stochastic gradient `grad f(x, xi(key))`.
    pub fn grad_stochastic(&self, x: &ParamVector, key: SampleKey) -> Result<ParamVector> {
        x.check_dim(self.dim)?;
        Ok(match &self.kind {
            ProblemKind::NoisyQuadratic { spectrum, noise } => {
                let mut rng = key.rng();
                spectrum
                    .iter()
                    .zip(x.iter())
                    .map(|(a, xi)| {
                        let u = normal(&mut rng).clamp(-NOISE_TRUNCATION, NOISE_TRUNCATION);
                        a * xi + noise * u
                    })
                    .collect()
            }
            ProblemKind::LeastSquares { matrix, targets } => {
                let i = key.rng().random_range(0..targets.len());
                let row = &matrix[i * self.dim..(i + 1) * self.dim];
                let r = dot(row, x.as_slice()) - targets[i];
                row.iter().map(|m| m * r).collect()
            }
            ProblemKind::Logistic { features, labels, reg } => {
                let i = key.rng().random_range(0..labels.len());
                let z = &features[i * self.dim..(i + 1) * self.dim];
                let coef = -labels[i] * sigmoid(-labels[i] * dot(z, x.as_slice()));
                z.iter()
                    .zip(x.iter())
                    .map(|(zj, xj)| coef * zj + reg * penalty_grad(*xj))
                    .collect()
            }
        })
    }

    /// Exact gradient of `F`.
    pub fn grad_true(&self, x: &ParamVector) -> Result<ParamVector> {
        x.check_dim(self.dim)?;
        Ok(match &self.kind {
            ProblemKind::NoisyQuadratic { spectrum, .. } => {
                spectrum.iter().zip(x.iter()).map(|(a, xi)| a * xi).collect()
            }
            ProblemKind::LeastSquares { matrix, targets } => {
                let n = targets.len() as f64;
                let mut g = vec![0.0; self.dim];
                for (row, y) in matrix.chunks_exact(self.dim).zip(targets) {
                    let r = dot(row, x.as_slice()) - y;
                    for (gj, m) in g.iter_mut().zip(row) {
                        *gj += m * r;
                    }
                }
                g.into_iter().map(|v| v / n).collect()
            }
            ProblemKind::Logistic { features, labels, reg } => {
                let n = labels.len() as f64;
                let mut g = vec![0.0; self.dim];
                for (z, y) in features.chunks_exact(self.dim).zip(labels) {
                    let coef = -y * sigmoid(-y * dot(z, x.as_slice()));
                    for (gj, zj) in g.iter_mut().zip(z) {
                        *gj += coef * zj;
                    }
                }
                g.into_iter()
                    .zip(x.iter())
                    .map(|(v, xj)| v / n + reg * penalty_grad(*xj))
                    .collect()
            }
        })
    }

    /// `F(x)`.
    pub fn value_true(&self, x: &ParamVector) -> Result<f64> {
        x.check_dim(self.dim)?;
        Ok(match &self.kind {
            ProblemKind::NoisyQuadratic { spectrum, .. } => {
                0.5 * spectrum.iter().zip(x.iter()).map(|(a, xi)| a * xi * xi).sum::<f64>()
            }
            ProblemKind::LeastSquares { matrix, targets } => {
                let n = targets.len() as f64;
                let sse: f64 = matrix
                    .chunks_exact(self.dim)
                    .zip(targets)
                    .map(|(row, y)| {
                        let r = dot(row, x.as_slice()) - y;
                        r * r
                    })
                    .sum();
                sse / (2.0 * n)
            }
            ProblemKind::Logistic { features, labels, reg } => {
                let n = labels.len() as f64;
                let loss: f64 = features
                    .chunks_exact(self.dim)
                    .zip(labels)
                    .map(|(z, y)| softplus(-y * dot(z, x.as_slice())))
                    .sum();
                loss / n + reg * x.iter().map(|v| v * v / (1.0 + v * v)).sum::<f64>()
            }
        })
    }

    /// Minimiser of the least-squares objective via the normal equations.
    pub fn least_squares_solution(&self) -> Option<ParamVector> {
        let ProblemKind::LeastSquares { matrix, targets } = &self.kind else {
            return None;
        };
        let d = self.dim;
        let mut gram = vec![0.0; d * d];
        let mut rhs = vec![0.0; d];
        for (row, y) in matrix.chunks_exact(d).zip(targets) {
            for i in 0..d {
                rhs[i] += row[i] * y;
                for j in 0..d {
                    gram[i * d + j] += row[i] * row[j];
                }
            }
        }
        solve_dense(gram, rhs, d).map(ParamVector::new)
    }
}

/// Central-difference gradient of `F` using `value_true`.
///
/// `h` is a relative step: coordinate `i` uses `h * (1 + |x_i|)`.
pub fn finite_diff_grad(problem: &Problem, x: &ParamVector, h: f64) -> Result<ParamVector> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid(format!("finite-difference step must be > 0, got {h}")));
    }
    x.check_dim(problem.dim())?;
    let mut probe = x.clone();
    let mut out = ParamVector::zeros(x.len());
    for i in 0..x.len() {
        let step = h * (1.0 + x[i].abs());
        probe[i] = x[i] + step;
        let up = problem.value_true(&probe)?;
        probe[i] = x[i] - step;
        let down = problem.value_true(&probe)?;
        probe[i] = x[i];
        out[i] = (up - down) / (2.0 * step);
    }
    Ok(out)
}

/// Default relative finite-difference step.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Largest relative error `||fd - grad F|| / ||grad F||` of central finite
/// differences over `points` uniform draws from the probe box.
pub fn gradient_check(problem: &Problem, points: usize, seed: u64) -> Result<f64> {
    let mut rng = SampleKey::auxiliary(seed, PURPOSE_GRAD_CHECK);
    let r = problem.probe_radius;
    let mut worst: f64 = 0.0;
    for _ in 0..points {
        let x: ParamVector = (0..problem.dim()).map(|_| rng.random_range(-r..=r)).collect();
        let exact = problem.grad_true(&x)?;
        let fd = finite_diff_grad(problem, &x, DEFAULT_FD_STEP)?;
        worst = worst.max(fd.sub(&exact).norm() / exact.norm().max(1e-12));
    }
    Ok(worst)
}

/// Monte-Carlo estimates of the smoothness and noise constants.
///
/// `beta_hat` is the largest observed ratio
/// `||grad_f(x, xi) - grad_f(y, xi)|| / ||x - y||` over random pairs in the
/// probe box; `sigma_hat` is the root mean squared deviation of stochastic
/// gradients from the true gradient over random probe points.
pub fn estimate_constants(problem: &Problem, probes: usize, seed: u64) -> Result<(f64, f64)> {
    if probes < 100 {
        return Err(Error::invalid(format!("need at least 100 probes, got {probes}")));
    }
    let mut rng = SampleKey::auxiliary(seed, PURPOSE_PROBE);
    let r = problem.probe_radius;
    let dim = problem.dim();
    let point = |rng: &mut rand_chacha::ChaCha8Rng| -> ParamVector {
        (0..dim).map(|_| rng.random_range(-r..=r)).collect()
    };
    let mut beta_hat: f64 = 0.0;
    let mut var_sum = 0.0;
    for j in 0..probes as u64 {
        let x = point(&mut rng);
        let y = point(&mut rng);
        let key = SampleKey::new(seed, 2 * j);
        let gx = problem.grad_stochastic(&x, key)?;
        let gy = problem.grad_stochastic(&y, key)?;
        let dist = x.sub(&y).norm();
        if dist > 0.0 {
            beta_hat = beta_hat.max(gx.sub(&gy).norm() / dist);
        }
        let other = SampleKey::new(seed, 2 * j + 1);
        let g = problem.grad_stochastic(&x, other)?;
        var_sum += g.sub(&problem.grad_true(&x)?).norm_sq();
    }
    Ok((beta_hat, (var_sum / probes as f64).sqrt()))
}

const PURPOSE_DATA: u64 = 0xDA7A;
const PURPOSE_PROBE: u64 = 0x9B0E;
const PURPOSE_GRAD_CHECK: u64 = 0x6C4E;

fn normal(rng: &mut impl RngCore) -> f64 {
    rng.sample(StandardNormal)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Derivative of `u^2 / (1 + u^2)`.
fn penalty_grad(u: f64) -> f64 {
    let s = 1.0 + u * u;
    2.0 * u / (s * s)
}

/// Gaussian elimination with partial pivoting; `None` if singular.
fn solve_dense(mut a: Vec<f64>, mut b: Vec<f64>, n: usize) -> Option<Vec<f64>> {
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))?;
        if a[pivot * n + col].abs() < 1e-300 {
            return None;
        }
        if pivot != col {
            for k in 0..n {
                a.swap(pivot * n + k, col * n + k);
            }
            b.swap(pivot, col);
        }
        for row in col + 1..n {
            let f = a[row * n + col] / a[col * n + col];
            for k in col..n {
                a[row * n + k] -= f * a[col * n + k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row * n + k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row * n + row];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(spectrum: &[f64], noise: f64) -> Problem {
        Problem::noisy_quadratic(spectrum.to_vec(), noise).unwrap()
    }

    fn rel_err(a: &ParamVector, b: &ParamVector) -> f64 {
        a.sub(b).norm() / b.norm().max(1e-12)
    }

    #[test]
    fn noiseless_gradient_is_ax() {
        let p = quad(&[1.0, 1.0], 0.0);
        let x = ParamVector::new(vec![3.0, -1.0]);
        for i in 0..5 {
            assert_eq!(p.grad_stochastic(&x, SampleKey::new(9, i)).unwrap(), x);
        }
    }

    #[test]
    fn additive_noise_cancels_for_shared_key() {
        let p = quad(&[1.0, 1.0], 1.0);
        let x = ParamVector::new(vec![0.7, -2.0]);
        let y = ParamVector::new(vec![-1.5, 0.25]);
        let k = SampleKey::new(3, 11);
        let diff = p.grad_stochastic(&x, k).unwrap().sub(&p.grad_stochastic(&y, k).unwrap());
        // exact up to the rounding of adding and removing the same noise value
        for i in 0..2 {
            assert!((diff[i] - (x[i] - y[i])).abs() <= 8.0 * f64::EPSILON * 10.0);
        }
    }

    #[test]
    fn noise_second_moment() {
        let p = quad(&[1.0, 1.0], 2.0);
        let x = ParamVector::zeros(2);
        let n = 100_000u64;
        let mean: f64 = (0..n)
            .map(|i| p.grad_stochastic(&x, SampleKey::new(5, i)).unwrap().norm_sq())
            .sum::<f64>()
            / n as f64;
        assert!((mean - 8.0).abs() <= 0.02 * 8.0, "mean = {mean}");
    }

    #[test]
    fn same_key_determinism() {
        for p in all_families() {
            let x = ParamVector::filled(p.dim(), 0.3);
            let k = SampleKey::new(1, 2);
            assert_eq!(p.grad_stochastic(&x, k).unwrap(), p.grad_stochastic(&x, k).unwrap());
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let p = quad(&[1.0, 2.0], 0.0);
        let x = ParamVector::zeros(3);
        assert!(p.grad_stochastic(&x, SampleKey::new(0, 0)).is_err());
        assert!(p.grad_true(&x).is_err());
        assert!(p.value_true(&x).is_err());
        assert!(finite_diff_grad(&p, &x, 1e-5).is_err());
    }

    #[test]
    fn quadratic_values() {
        let p = quad(&[1.0, 4.0], 0.0);
        assert_eq!(p.grad_true(&ParamVector::new(vec![1.0, 1.0])).unwrap().as_slice(), &[1.0, 4.0]);
        let id = quad(&[1.0, 1.0], 0.0);
        assert_eq!(id.value_true(&ParamVector::new(vec![3.0, 4.0])).unwrap(), 12.5);
        assert_eq!(id.value_true(&ParamVector::zeros(2)).unwrap(), id.f_star.unwrap());
    }

    #[test]
    fn stationary_points() {
        let p = quad(&[1.0, 3.0, 0.5], 1.0);
        assert!(p.grad_true(&ParamVector::zeros(3)).unwrap().norm() <= 1e-12);
        let ls = Problem::least_squares_synthetic(4, 50, 0.0, 3).unwrap();
        let xs = ls.least_squares_solution().unwrap();
        assert!(ls.grad_true(&xs).unwrap().norm() <= 1e-12);
        let noisy = Problem::least_squares_synthetic(4, 50, 0.3, 3).unwrap();
        let xs = noisy.least_squares_solution().unwrap();
        assert!(noisy.grad_true(&xs).unwrap().norm() <= 1e-12);
        assert!((noisy.value_true(&xs).unwrap() - noisy.f_star.unwrap()).abs() <= 1e-15);
    }

    #[test]
    fn finite_difference_on_quadratic() {
        let p = quad(&[1.0, 1.0], 0.0);
        let g = finite_diff_grad(&p, &ParamVector::new(vec![1.0, 0.0]), 1e-5).unwrap();
        assert!((g[0] - 1.0).abs() <= 1e-9 && g[1].abs() <= 1e-9, "{g:?}");
        let zero = quad(&[0.0, 0.0, 0.0], 0.0);
        let g = finite_diff_grad(&zero, &ParamVector::filled(3, 2.0), 1e-5).unwrap();
        assert_eq!(g, ParamVector::zeros(3));
        assert!(finite_diff_grad(&p, &ParamVector::zeros(2), 0.0).is_err());
        assert!(finite_diff_grad(&p, &ParamVector::zeros(2), -1.0).is_err());
    }

    #[test]
    fn directional_derivative_matches_gradient() {
        for p in all_families() {
            let mut rng = SampleKey::auxiliary(77, 1);
            let x: ParamVector = (0..p.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let v: ParamVector = (0..p.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let h = 1e-5;
            let fd = (p.value_true(&x.add_scaled(h, &v)).unwrap() - p.value_true(&x.add_scaled(-h, &v)).unwrap())
                / (2.0 * h);
            let exact = p.grad_true(&x).unwrap().dot(&v);
            assert!((fd - exact).abs() <= 1e-6, "{}: {fd} vs {exact}", p.family_name());
        }
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        for p in all_families() {
            let mut rng = SampleKey::auxiliary(2024, 3);
            let mut worst: f64 = 0.0;
            for _ in 0..20 {
                let x: ParamVector = (0..p.dim()).map(|_| rng.random_range(-2.0..2.0)).collect();
                let fd = finite_diff_grad(&p, &x, DEFAULT_FD_STEP).unwrap();
                worst = worst.max(rel_err(&fd, &p.grad_true(&x).unwrap()));
            }
            assert!(worst < 1e-5, "{}: {worst}", p.family_name());
        }
    }

    #[test]
    fn estimates_for_exact_quadratic() {
        let dim = 4;
        let p = quad(&[1.0; 4], 1.0);
        let (_, sigma_hat) = estimate_constants(&p, 10_000, 1).unwrap();
        let normalized = sigma_hat / (dim as f64).sqrt();
        assert!((0.95..=1.05).contains(&normalized), "{normalized}");
        assert!(sigma_hat <= p.sigma * ESTIMATE_MARGIN);

        let q = quad(&[1.0, 1.0, 1.0, 10.0], 0.0);
        let (beta_hat, sigma_hat) = estimate_constants(&q, 10_000, 2).unwrap();
        assert!((9.5..=10.0).contains(&beta_hat), "{beta_hat}");
        assert!(sigma_hat < 1e-12);
        assert!(beta_hat <= q.beta * ESTIMATE_MARGIN);
        assert!(estimate_constants(&q, 99, 2).is_err());
    }

    #[test]
    fn spec_builds_and_reports_violations() {
        let spec: ProblemSpec = toml::from_str("family = \"noisy-quadratic\"\ndim = 3\n").unwrap();
        let p = spec.build().unwrap();
        assert_eq!(p.dim(), 3);
        assert_eq!(p.beta, 1.0);
        let bad = ProblemSpec::NoisyQuadratic {
            dim: 3,
            noise: -1.0,
            spectrum: Some(vec![1.0]),
            min_eig: 1.0,
            max_eig: 1.0,
        };
        assert_eq!(bad.violations().len(), 2);
        let spread = ProblemSpec::NoisyQuadratic {
            dim: 3,
            noise: 0.0,
            spectrum: None,
            min_eig: 0.1,
            max_eig: 10.0,
        }
        .build()
        .unwrap();
        assert_eq!(spread.beta, 10.0);
    }

    #[test]
    fn logistic_value_bounded_below_and_stable() {
        let p = Problem::logistic_synthetic(3, 50, 0.1, 0.1, 4).unwrap();
        let far = ParamVector::filled(3, 1e4);
        let v = p.value_true(&far).unwrap();
        assert!(v.is_finite() && v >= 0.0);
        assert!(p.beta > 0.0 && p.sigma > 0.0);
    }

    pub(crate) fn all_families() -> Vec<Problem> {
        vec![
            quad(&[0.5, 1.0, 2.0], 0.5),
            Problem::least_squares_synthetic(5, 60, 0.1, 1).unwrap(),
            Problem::logistic_synthetic(4, 80, 0.1, 0.1, 2).unwrap(),
        ]
    }
}
