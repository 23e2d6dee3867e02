//! C ABI over `metastorm`.
//!
//! Problems and optimizers are opaque heap handles created by `ms_*_new`
//! style constructors and released with the matching `*_free`. Every
//! fallible function returns an [`MsStatus`]; on failure a message is
//! available from [`ms_last_error_message`] on the same thread.
//!
//! Vectors cross the boundary as `(pointer, length)` pairs owned by the
//! caller. Handles are not synchronised: a handle must not be used from two
//! threads at once, but distinct handles are independent.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use metastorm::optimizers::Optimizer;
use metastorm::problems::{Problem, ProblemSpec};
use metastorm::schedules::{self, Algorithm, HyperParams};
use metastorm::{Error, ParamVector, SampleKey};

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MsStatus {
    Ok = 0,
    InvalidArgument = 1,
    Config = 2,
    Diverged = 3,
    Verification = 4,
    Io = 5,
    NullPointer = 6,
    Panic = 7,
}

/// Algorithm selector.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MsAlgorithm {
    MetaStorm = 0,
    MetaStormSg = 1,
    MetaStormNa = 2,
    MetaStormH = 3,
    MetaStormSgH = 4,
    StormPlus = 5,
    Sgd = 6,
    AdaGradNorm = 7,
    OracleStorm = 8,
}

impl From<MsAlgorithm> for Algorithm {
    fn from(a: MsAlgorithm) -> Self {
        match a {
            MsAlgorithm::MetaStorm => Algorithm::MetaStorm,
            MsAlgorithm::MetaStormSg => Algorithm::MetaStormSg,
            MsAlgorithm::MetaStormNa => Algorithm::MetaStormNa,
            MsAlgorithm::MetaStormH => Algorithm::MetaStormH,
            MsAlgorithm::MetaStormSgH => Algorithm::MetaStormSgH,
            MsAlgorithm::StormPlus => Algorithm::StormPlus,
            MsAlgorithm::Sgd => Algorithm::Sgd,
            MsAlgorithm::AdaGradNorm => Algorithm::AdaGradNorm,
            MsAlgorithm::OracleStorm => Algorithm::OracleStorm,
        }
    }
}

impl From<Algorithm> for MsAlgorithm {
    fn from(a: Algorithm) -> Self {
        match a {
            Algorithm::MetaStorm => MsAlgorithm::MetaStorm,
            Algorithm::MetaStormSg => MsAlgorithm::MetaStormSg,
            Algorithm::MetaStormNa => MsAlgorithm::MetaStormNa,
            Algorithm::MetaStormH => MsAlgorithm::MetaStormH,
            Algorithm::MetaStormSgH => MsAlgorithm::MetaStormSgH,
            Algorithm::StormPlus => MsAlgorithm::StormPlus,
            Algorithm::Sgd => MsAlgorithm::Sgd,
            Algorithm::AdaGradNorm => MsAlgorithm::AdaGradNorm,
            Algorithm::OracleStorm => MsAlgorithm::OracleStorm,
        }
    }
}

/// Hyperparameters. `q` is derived from `p` and not part of the struct.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MsHyperParams {
    pub a0: f64,
    pub b0: f64,
    pub eta: f64,
    pub p: f64,
    pub alpha: f64,
}

/// Telemetry of one optimizer step. Optional quantities are NaN when absent.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MsStepReport {
    pub t: u64,
    pub a_next: f64,
    pub a_for_b: f64,
    pub b: f64,
    pub d_norm: f64,
    pub queries: u32,
    pub momentum_term: f64,
    pub grad_sample_sq: f64,
    pub grad_diff_sq: f64,
}

/// Opaque problem handle.
pub struct MsProblem {
    inner: Problem,
}

/// Opaque optimizer handle. Owns a copy of its problem.
pub struct MsOptimizer {
    inner: Optimizer,
    problem: Problem,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(MsStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InvalidArgument(_) => MsStatus::InvalidArgument,
            Error::Config(_) => MsStatus::Config,
            Error::Diverged { .. } => MsStatus::Diverged,
            Error::Verification(_) => MsStatus::Verification,
            Error::Io { .. } => MsStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(MsStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(MsStatus::InvalidArgument, msg.into())
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> MsStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => MsStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic".into());
            MsStatus::Panic
        }
    }
}

unsafe fn slice<'a>(data: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if data.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(data, len))
}

unsafe fn slice_mut<'a>(data: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if data.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(data, len))
}

unsafe fn write<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

unsafe fn problem_ref<'a>(p: *const MsProblem) -> Result<&'a Problem, Failure> {
    p.as_ref().map(|h| &h.inner).ok_or_else(|| null("problem"))
}

unsafe fn cstr<'a>(s: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if s.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

fn copy_into(src: &ParamVector, dst: &mut [f64]) -> Result<(), Failure> {
    if dst.len() != src.len() {
        return Err(invalid(format!("output buffer has {} entries, need {}", dst.len(), src.len())));
    }
    dst.copy_from_slice(src.as_slice());
    Ok(())
}

fn emit_problem(problem: Problem, out: *mut *mut MsProblem) -> Result<(), Failure> {
    let handle = Box::into_raw(Box::new(MsProblem { inner: problem }));
    unsafe { write(out, handle, "out") }.inspect_err(|_| unsafe { drop(Box::from_raw(handle)) })
}

/// Message of the last failure on this thread, or null if none. The string
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ms_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ms_version() -> *const c_char {
    static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(v) => v,
        Err(_) => c"unknown",
    };
    VERSION.as_ptr()
}

/// Quadratic `1/2 x^T diag(spectrum) x` with additive Gaussian gradient
/// noise of per-coordinate scale `noise`.
///
/// # Safety
/// `spectrum` must point to `dim` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ms_problem_noisy_quadratic(
    spectrum: *const f64,
    dim: usize,
    noise: f64,
    out: *mut *mut MsProblem,
) -> MsStatus {
    guard(|| {
        let s = slice(spectrum, dim, "spectrum")?.to_vec();
        emit_problem(Problem::noisy_quadratic(s, noise)?, out)
    })
}

/// Synthetic row-sampled least squares.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ms_problem_least_squares(
    dim: usize,
    rows: usize,
    noise: f64,
    data_seed: u64,
    out: *mut *mut MsProblem,
) -> MsStatus {
    guard(|| emit_problem(Problem::least_squares_synthetic(dim, rows, noise, data_seed)?, out))
}

/// Synthetic logistic regression with the bounded non-convex regulariser.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ms_problem_logistic(
    dim: usize,
    samples: usize,
    flip_prob: f64,
    reg: f64,
    data_seed: u64,
    out: *mut *mut MsProblem,
) -> MsStatus {
    guard(|| emit_problem(Problem::logistic_synthetic(dim, samples, flip_prob, reg, data_seed)?, out))
}

/// Builds a problem from the TOML table used in experiment configs, e.g.
/// `family = "logistic"\ndim = 5`.
///
/// # Safety
/// `toml_text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ms_problem_from_toml(toml_text: *const c_char, out: *mut *mut MsProblem) -> MsStatus {
    guard(|| {
        let text = cstr(toml_text, "toml_text")?;
        let spec: ProblemSpec =
            toml::from_str(text).map_err(|e| Failure(MsStatus::Config, format!("problem spec: {e}")))?;
        let v = spec.violations();
        if !v.is_empty() {
            return Err(Error::Config(v).into());
        }
        emit_problem(spec.build()?, out)
    })
}

/// # Safety
/// `problem` must be null or a handle from an `ms_problem_*` constructor
/// that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn ms_problem_free(problem: *mut MsProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// Dimension of the problem, 0 for a null handle.
///
/// # Safety
/// `problem` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ms_problem_dim(problem: *const MsProblem) -> usize {
    problem.as_ref().map_or(0, |p| p.inner.dim())
}

/// Smoothness and noise constants. `f_star` receives NaN when unknown.
///
/// # Safety
/// `problem` must be a live handle; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn ms_problem_constants(
    problem: *const MsProblem,
    beta: *mut f64,
    sigma: *mut f64,
    f_star: *mut f64,
) -> MsStatus {
    guard(|| {
        let p = problem_ref(problem)?;
        write(beta, p.beta, "beta")?;
        write(sigma, p.sigma, "sigma")?;
        write(f_star, p.f_star.unwrap_or(f64::NAN), "f_star")
    })
}

/// Stochastic gradient at `x` for the sample keyed by
/// `(run_seed, draw_index)`. Pure in its arguments.
///
/// # Safety
/// `x` and `grad` must each point to `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn ms_problem_grad_stochastic(
    problem: *const MsProblem,
    x: *const f64,
    dim: usize,
    run_seed: u64,
    draw_index: u64,
    grad: *mut f64,
) -> MsStatus {
    guard(|| {
        let p = problem_ref(problem)?;
        let x = ParamVector::from(slice(x, dim, "x")?);
        let g = p.grad_stochastic(&x, SampleKey::new(run_seed, draw_index))?;
        copy_into(&g, slice_mut(grad, dim, "grad")?)
    })
}

/// Exact gradient of the expected objective.
///
/// # Safety
/// `x` and `grad` must each point to `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn ms_problem_grad_true(
    problem: *const MsProblem,
    x: *const f64,
    dim: usize,
    grad: *mut f64,
) -> MsStatus {
    guard(|| {
        let p = problem_ref(problem)?;
        let g = p.grad_true(&ParamVector::from(slice(x, dim, "x")?))?;
        copy_into(&g, slice_mut(grad, dim, "grad")?)
    })
}

/// Exact objective value.
///
/// # Safety
/// `x` must point to `dim` doubles; `value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ms_problem_value(
    problem: *const MsProblem,
    x: *const f64,
    dim: usize,
    value: *mut f64,
) -> MsStatus {
    guard(|| {
        let p = problem_ref(problem)?;
        let v = p.value_true(&ParamVector::from(slice(x, dim, "x")?))?;
        write(value, v, "value")
    })
}

/// Parses a kebab-case algorithm name such as `meta-storm-sg`.
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ms_algorithm_from_name(name: *const c_char, out: *mut MsAlgorithm) -> MsStatus {
    guard(|| {
        let alg: Algorithm = cstr(name, "name")?.parse()?;
        write(out, alg.into(), "out")
    })
}

/// Default hyperparameters of `algorithm` for a problem of size `dim`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ms_hyper_preset(algorithm: MsAlgorithm, dim: usize, out: *mut MsHyperParams) -> MsStatus {
    guard(|| {
        let hp = HyperParams::preset(algorithm.into(), dim);
        write(
            out,
            MsHyperParams {
                a0: hp.a0,
                b0: hp.b0,
                eta: hp.eta,
                p: hp.p,
                alpha: hp.alpha,
            },
            "out",
        )
    })
}

fn checked(algorithm: Algorithm, hp: &MsHyperParams) -> Result<HyperParams, Failure> {
    Ok(HyperParams::new(algorithm, hp.a0, hp.b0, hp.eta, hp.p, hp.alpha)?)
}

/// Validates hyperparameters for `algorithm`. On failure the message lists
/// every violated constraint.
///
/// # Safety
/// `hp` must point to a readable struct.
#[no_mangle]
pub unsafe extern "C" fn ms_hyper_validate(algorithm: MsAlgorithm, hp: *const MsHyperParams) -> MsStatus {
    guard(|| {
        let hp = hp.as_ref().ok_or_else(|| null("hp"))?;
        checked(algorithm.into(), hp).map(|_| ())
    })
}

/// Creates an optimizer at `x1`. `horizon` is the planned number of
/// iterates (used by oracle-tuned STORM only). The problem is copied.
///
/// # Safety
/// `problem` must be a live handle, `hp` readable, `x1` must point to `dim`
/// doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ms_optimizer_new(
    problem: *const MsProblem,
    algorithm: MsAlgorithm,
    hp: *const MsHyperParams,
    x1: *const f64,
    dim: usize,
    run_seed: u64,
    horizon: u64,
    out: *mut *mut MsOptimizer,
) -> MsStatus {
    guard(|| {
        let p = problem_ref(problem)?.clone();
        let alg: Algorithm = algorithm.into();
        let hp = checked(alg, hp.as_ref().ok_or_else(|| null("hp"))?)?;
        let x1 = ParamVector::from(slice(x1, dim, "x1")?);
        let inner = Optimizer::new(&p, alg, hp, x1, run_seed, horizon)?;
        let handle = Box::into_raw(Box::new(MsOptimizer { inner, problem: p }));
        write(out, handle, "out").inspect_err(|_| drop(Box::from_raw(handle)))
    })
}

/// # Safety
/// `optimizer` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ms_optimizer_free(optimizer: *mut MsOptimizer) {
    if !optimizer.is_null() {
        drop(Box::from_raw(optimizer));
    }
}

/// Executes one iteration. `report` may be null. Returns
/// `MS_STATUS_DIVERGED` and leaves the state unchanged if a non-finite
/// value appears.
///
/// # Safety
/// `optimizer` must be a live handle; `report` null or writable.
#[no_mangle]
pub unsafe extern "C" fn ms_optimizer_step(optimizer: *mut MsOptimizer, report: *mut MsStepReport) -> MsStatus {
    guard(|| {
        let opt = optimizer.as_mut().ok_or_else(|| null("optimizer"))?;
        let r = opt.inner.step(&opt.problem)?;
        if !report.is_null() {
            report.write(MsStepReport {
                t: r.t,
                a_next: r.a_next,
                a_for_b: r.a_for_b,
                b: r.b,
                d_norm: r.d_norm,
                queries: r.queries,
                momentum_term: r.momentum_term.unwrap_or(f64::NAN),
                grad_sample_sq: r.grad_sample_sq,
                grad_diff_sq: r.grad_diff_sq.unwrap_or(f64::NAN),
            });
        }
        Ok(())
    })
}

/// Copies the current iterate into `x`.
///
/// # Safety
/// `optimizer` must be a live handle; `x` must point to `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn ms_optimizer_x(optimizer: *const MsOptimizer, x: *mut f64, dim: usize) -> MsStatus {
    guard(|| {
        let opt = optimizer.as_ref().ok_or_else(|| null("optimizer"))?;
        copy_into(opt.inner.x(), slice_mut(x, dim, "x")?)
    })
}

/// Copies the current estimator `d_t` into `d`.
///
/// # Safety
/// `optimizer` must be a live handle; `d` must point to `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn ms_optimizer_d(optimizer: *const MsOptimizer, d: *mut f64, dim: usize) -> MsStatus {
    guard(|| {
        let opt = optimizer.as_ref().ok_or_else(|| null("optimizer"))?;
        copy_into(opt.inner.d(), slice_mut(d, dim, "d")?)
    })
}

/// Current round `t` (1 before the first step), 0 for a null handle.
///
/// # Safety
/// `optimizer` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ms_optimizer_t(optimizer: *const MsOptimizer) -> u64 {
    optimizer.as_ref().map_or(0, |o| o.inner.t())
}

/// Oracle calls made so far, 0 for a null handle.
///
/// # Safety
/// `optimizer` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ms_optimizer_queries(optimizer: *const MsOptimizer) -> u64 {
    optimizer.as_ref().map_or(0, |o| o.inner.queries())
}

/// `a_{t+1} = (1 + grad_sq_sum / a0^2)^{-2/3}`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ms_momentum_sg(grad_sq_sum: f64, a0: f64, out: *mut f64) -> MsStatus {
    guard(|| write(out, schedules::momentum_sg(grad_sq_sum, a0)?, "out"))
}

/// Same form as [`ms_momentum_sg`], over squared gradient differences.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ms_momentum_ms(diff_sq_sum: f64, a0: f64, out: *mut f64) -> MsStatus {
    guard(|| write(out, schedules::momentum_ms(diff_sq_sum, a0)?, "out"))
}

/// `a_{t+1} = (1 + t / a0^2)^{-2/3}`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ms_momentum_na(t: u64, a0: f64, out: *mut f64) -> MsStatus {
    guard(|| write(out, schedules::momentum_na(t, a0)?, "out"))
}

/// `b = (b0^{1/p} + d_sq_sum)^p / a^{(1-p)/2}`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ms_stepsize(d_sq_sum: f64, a: f64, b0: f64, p: f64, out: *mut f64) -> MsStatus {
    guard(|| {
        let hp = HyperParams::new(Algorithm::MetaStormNa, 1.0, b0, 1.0, p, 0.0)?;
        write(out, schedules::stepsize(d_sq_sum, a, &hp)?, "out")
    })
}

/// Fixed STORM constants tuned from the true problem parameters.
///
/// # Safety
/// `a` and `b` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ms_oracle_constants(
    beta: f64,
    sigma: f64,
    horizon: u64,
    delta_f: f64,
    a: *mut f64,
    b: *mut f64,
) -> MsStatus {
    guard(|| {
        let c = schedules::oracle_tuned_constants(beta, sigma, horizon, delta_f)?;
        write(a, c.a, "a")?;
        write(b, c.b, "b")
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn algorithm_enum_round_trips() {
        for alg in Algorithm::ALL {
            assert_eq!(Algorithm::from(MsAlgorithm::from(alg)), alg);
        }
    }

    #[test]
    fn panics_become_status() {
        assert_eq!(guard(|| panic!("boom")), MsStatus::Panic);
        let msg = unsafe { CStr::from_ptr(ms_last_error_message()) };
        assert_eq!(msg.to_str().unwrap(), "internal panic");
    }

    #[test]
    fn version_is_package_version() {
        let v = unsafe { CStr::from_ptr(ms_version()) };
        assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }
}
