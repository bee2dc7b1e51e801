use std::ffi::c_char;

use kalman_inversion::baselines::{run_transport, TransportConfig};
use kalman_inversion::cli::spec::{Family, MethodName, Sampler, DEFAULT_PCN_STEP, DEFAULT_RWM_STEP, DEFAULT_TRANSPORT_DT};
use kalman_inversion::mcmc::{pcn_sample, rwm_sample, ChainConfig};
use kalman_inversion::methods::{run, IterationRecord, RunConfig, RunOutcome};
use kalman_inversion::problems::analytic_posterior;
use kalman_inversion::{GaussianBelief, InverseProblem};

use crate::error::{guard, null, Failure, KiStatus};
use crate::problem::{problem_ref, KiProblem};

/// Inversion methods. Values outside this enum are undefined behaviour.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KiMethod {
    Uki1 = 0,
    Uki2 = 1,
    Eki = 2,
    Eaki = 3,
    Etki = 4,
    Iukf1 = 5,
    Iukf2 = 6,
    Ienkf = 7,
    Ieakf = 8,
    Ietkf = 9,
    Rwm = 10,
    Pcn = 11,
}

impl From<KiMethod> for MethodName {
    fn from(m: KiMethod) -> Self {
        match m {
            KiMethod::Uki1 => MethodName::Uki1,
            KiMethod::Uki2 => MethodName::Uki2,
            KiMethod::Eki => MethodName::Eki,
            KiMethod::Eaki => MethodName::Eaki,
            KiMethod::Etki => MethodName::Etki,
            KiMethod::Iukf1 => MethodName::Iukf1,
            KiMethod::Iukf2 => MethodName::Iukf2,
            KiMethod::Ienkf => MethodName::Ienkf,
            KiMethod::Ieakf => MethodName::Ieakf,
            KiMethod::Ietkf => MethodName::Ietkf,
            KiMethod::Rwm => MethodName::Rwm,
            KiMethod::Pcn => MethodName::Pcn,
        }
    }
}

/// Run options; start from `ki_run_options_default()`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct KiRunOptions {
    pub method: KiMethod,
    /// Mean-field `γ`.
    pub gamma: f64,
    /// Mean-field iterations.
    pub iterations: usize,
    /// Particles for ensemble methods.
    pub ensemble_size: usize,
    pub seed: u64,
    /// Transport step size; 0 selects the default.
    pub dt: f64,
    /// Moment-correct the initial ensemble: 1 yes, 0 no, -1 method default.
    pub exact_init: i32,
    /// Worker threads; 0 uses the global pool.
    pub threads: usize,
    pub n_samples: usize,
    pub burn_in: usize,
    /// RWM step or pCN `β`; 0 selects the sampler default.
    pub step_size: f64,
    /// Record errors against the closed-form posterior (affine problems).
    pub analytic_reference: bool,
}

#[no_mangle]
pub extern "C" fn ki_run_options_default() -> KiRunOptions {
    KiRunOptions {
        method: KiMethod::Uki2,
        gamma: 1.0,
        iterations: 30,
        ensemble_size: 10,
        seed: 0,
        dt: 0.0,
        exact_init: -1,
        threads: 0,
        n_samples: 100_000,
        burn_in: 10_000,
        step_size: 0.0,
        analytic_reference: false,
    }
}

/// Diagnostics of one iteration; unavailable errors are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KiIterationRecord {
    pub iter: usize,
    pub mean_rel_err: f64,
    pub cov_rel_err: f64,
    pub opt_err: f64,
    pub fwd_evals: usize,
    pub wall_ms: f64,
}

impl From<&IterationRecord> for KiIterationRecord {
    fn from(r: &IterationRecord) -> Self {
        KiIterationRecord {
            iter: r.iter,
            mean_rel_err: r.mean_rel_err.unwrap_or(f64::NAN),
            cov_rel_err: r.cov_rel_err.unwrap_or(f64::NAN),
            opt_err: r.opt_err,
            fwd_evals: r.fwd_evals,
            wall_ms: r.wall_ms,
        }
    }
}

/// Opaque result handle.
pub struct KiResult {
    belief: GaussianBelief,
    history: Vec<KiIterationRecord>,
    iterations: usize,
    fwd_evals: usize,
    diverged: bool,
    acceptance_rate: f64,
}

pub(crate) unsafe fn copy_out<T: Copy>(src: &[T], dst: *mut T, len: usize) -> Result<(), Failure> {
    if len < src.len() {
        return Err(Failure(
            KiStatus::BufferTooSmall,
            format!("buffer holds {len} values, {} needed", src.len()),
        ));
    }
    if src.is_empty() {
        return Ok(());
    }
    if dst.is_null() {
        return Err(null("output buffer"));
    }
    std::ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len());
    Ok(())
}

fn from_outcome(out: RunOutcome) -> KiResult {
    KiResult {
        belief: out.final_moments(),
        history: out.history().iter().map(KiIterationRecord::from).collect(),
        iterations: out.state.iteration,
        fwd_evals: out.state.fwd_evals,
        diverged: out.divergence.is_some(),
        acceptance_rate: f64::NAN,
    }
}

fn execute(problem: &InverseProblem, o: &KiRunOptions) -> Result<KiResult, Failure> {
    let reference = if o.analytic_reference {
        Some(analytic_posterior(problem)?)
    } else {
        None
    };
    let exact_init = |default| match o.exact_init {
        -1 => Ok(default),
        0 => Ok(false),
        1 => Ok(true),
        v => Err(Failure(KiStatus::InvalidArgument, format!("exact_init must be -1, 0 or 1, got {v}"))),
    };
    match MethodName::from(o.method).family() {
        Family::MeanField(method) => {
            let cfg = RunConfig {
                gamma: o.gamma,
                iterations: o.iterations,
                ensemble_size: o.ensemble_size,
                seed: o.seed,
                exact_init: exact_init(false)?,
                reference,
            };
            Ok(from_outcome(run(method, problem, &cfg)?))
        }
        Family::Transport(variant) => {
            let dt = if o.dt == 0.0 { DEFAULT_TRANSPORT_DT } else { o.dt };
            let mut cfg = TransportConfig::from_dt(dt, variant)?;
            cfg.ensemble_size = o.ensemble_size;
            cfg.exact_init = exact_init(true)?;
            Ok(from_outcome(run_transport(problem, &cfg, o.seed, reference)?))
        }
        Family::Chain(sampler) => {
            let default_step = match sampler {
                Sampler::Rwm => DEFAULT_RWM_STEP,
                Sampler::Pcn => DEFAULT_PCN_STEP,
            };
            let cfg = ChainConfig {
                n_samples: o.n_samples,
                burn_in: o.burn_in,
                step_size: if o.step_size == 0.0 { default_step } else { o.step_size },
                seed: o.seed,
            };
            let chain = match sampler {
                Sampler::Rwm => rwm_sample(problem, &cfg)?,
                Sampler::Pcn => pcn_sample(problem, &cfg)?,
            };
            Ok(KiResult {
                belief: chain.belief(),
                history: Vec::new(),
                iterations: 1,
                fwd_evals: o.n_samples + 1,
                diverged: false,
                acceptance_rate: chain.acceptance_rate,
            })
        }
    }
}

/// Run one method. On success `*out` receives a result handle; a run that
/// diverged still succeeds and reports it through `ki_result_diverged`.
///
/// # Safety
/// `problem` must be a live handle, `options` null (defaults) or valid, and
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ki_run(problem: *const KiProblem, options: *const KiRunOptions, out: *mut *mut KiResult) -> KiStatus {
    guard(|| {
        let problem = problem_ref(problem)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let o = options.as_ref().copied().unwrap_or_else(|| ki_run_options_default());
        let result = if o.threads > 0 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(o.threads)
                .build()
                .map_err(|e| Failure(KiStatus::InvalidArgument, e.to_string()))?;
            pool.install(|| execute(problem, &o))?
        } else {
            execute(problem, &o)?
        };
        *out = Box::into_raw(Box::new(result));
        Ok(())
    })
}

unsafe fn result_ref<'a>(r: *const KiResult) -> Result<&'a KiResult, Failure> {
    r.as_ref().ok_or_else(|| null("result"))
}

/// # Safety
/// `result` must be null or a live handle from `ki_run`.
#[no_mangle]
pub unsafe extern "C" fn ki_result_free(result: *mut KiResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Parameter dimension, or 0 for a null handle.
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ki_result_dim(result: *const KiResult) -> usize {
    result.as_ref().map_or(0, |r| r.belief.dim())
}

/// Completed iterations (1 for samplers), or 0 for a null handle.
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ki_result_iterations(result: *const KiResult) -> usize {
    result.as_ref().map_or(0, |r| r.iterations)
}

/// Total forward evaluations, or 0 for a null handle.
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ki_result_fwd_evals(result: *const KiResult) -> usize {
    result.as_ref().map_or(0, |r| r.fwd_evals)
}

/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ki_result_diverged(result: *const KiResult) -> bool {
    result.as_ref().is_some_and(|r| r.diverged)
}

/// Sampler acceptance rate; NaN for other methods or a null handle.
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ki_result_acceptance_rate(result: *const KiResult) -> f64 {
    result.as_ref().map_or(f64::NAN, |r| r.acceptance_rate)
}

/// # Safety
/// `result` must be a live handle; `mean` valid for `len` values.
#[no_mangle]
pub unsafe extern "C" fn ki_result_mean(result: *const KiResult, mean: *mut f64, len: usize) -> KiStatus {
    guard(|| copy_out(result_ref(result)?.belief.mean.as_slice(), mean, len))
}

/// Row-major covariance.
///
/// # Safety
/// `result` must be a live handle; `cov` valid for `len` values.
#[no_mangle]
pub unsafe extern "C" fn ki_result_covariance(result: *const KiResult, cov: *mut f64, len: usize) -> KiStatus {
    guard(|| {
        // symmetric, but transpose anyway so the layout never depends on it
        let rows = result_ref(result)?.belief.covariance.transpose();
        copy_out(rows.as_slice(), cov, len)
    })
}

/// Number of history records, or 0 for a null handle.
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ki_result_history_len(result: *const KiResult) -> usize {
    result.as_ref().map_or(0, |r| r.history.len())
}

/// # Safety
/// `result` must be a live handle; `records` valid for `len` entries.
#[no_mangle]
pub unsafe extern "C" fn ki_result_history(result: *const KiResult, records: *mut KiIterationRecord, len: usize) -> KiStatus {
    guard(|| copy_out(&result_ref(result)?.history, records, len))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ki_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
