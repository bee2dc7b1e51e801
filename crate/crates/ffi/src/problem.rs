use std::ffi::{c_char, c_void, CStr};
use std::sync::Arc;

use kalman_inversion::problems::{analytic_posterior, build_problem, ProblemKind, ProblemOptions};
use kalman_inversion::{Error, ForwardModel, InverseProblem, LinearModel};
use nalgebra::{DMatrix, DVector};

use crate::error::{guard, null, Failure, KiStatus};

/// Opaque inverse problem handle.
pub struct KiProblem {
    pub(crate) inner: InverseProblem,
}

/// Forward model callback: write `G(theta)` (`n_obs` values) into `out` and
/// return 0, or return nonzero on failure. It may be called concurrently from
/// several threads unless runs are restricted to one thread.
pub type KiForwardFn = Option<
    unsafe extern "C" fn(user_data: *mut c_void, theta: *const f64, n_params: usize, out: *mut f64, n_obs: usize) -> i32,
>;

pub(crate) unsafe fn slice<'a>(ptr: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

pub(crate) unsafe fn problem_ref<'a>(p: *const KiProblem) -> Result<&'a InverseProblem, Failure> {
    p.as_ref().map(|p| &p.inner).ok_or_else(|| null("problem"))
}

unsafe fn store(out: *mut *mut KiProblem, problem: InverseProblem) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(KiProblem { inner: problem }));
    Ok(())
}

type GaussianParts = (DVector<f64>, DMatrix<f64>, DVector<f64>, DMatrix<f64>);

/// `(y, Σ_η, r₀, Σ₀)` read from row-major buffers.
unsafe fn gaussian_parts(
    n_params: usize,
    n_obs: usize,
    y: *const f64,
    noise_cov: *const f64,
    prior_mean: *const f64,
    prior_cov: *const f64,
) -> Result<GaussianParts, Failure> {
    if n_params == 0 || n_obs == 0 {
        return Err(Failure(KiStatus::InvalidArgument, "dimensions must be positive".into()));
    }
    Ok((
        DVector::from_column_slice(slice(y, n_obs, "y")?),
        DMatrix::from_row_slice(n_obs, n_obs, slice(noise_cov, n_obs * n_obs, "noise_cov")?),
        DVector::from_column_slice(slice(prior_mean, n_params, "prior_mean")?),
        DMatrix::from_row_slice(n_params, n_params, slice(prior_cov, n_params * n_params, "prior_cov")?),
    ))
}

/// Linear problem `y = Gθ + η`. All matrices are row-major; `g` is
/// `n_obs × n_params`.
///
/// # Safety
/// Every pointer must be valid for the stated number of `f64`s; `out` must
/// be writable.
#[no_mangle]
pub unsafe extern "C" fn ki_problem_linear(
    g: *const f64,
    n_obs: usize,
    n_params: usize,
    y: *const f64,
    noise_cov: *const f64,
    prior_mean: *const f64,
    prior_cov: *const f64,
    out: *mut *mut KiProblem,
) -> KiStatus {
    guard(|| {
        let (y, noise, r0, c0) = gaussian_parts(n_params, n_obs, y, noise_cov, prior_mean, prior_cov)?;
        let g = DMatrix::from_row_slice(n_obs, n_params, slice(g, n_obs * n_params, "g")?);
        store(out, InverseProblem::new(Arc::new(LinearModel::new(g)), y, noise, r0, c0)?)
    })
}

/// One of the built-in benchmark problems by name (`linear-over`,
/// `linear-under`, `elliptic-well`, `elliptic-under`, `hilbert`, `darcy`).
/// `dim` sets the Hilbert dimension or number of Darcy modes and `grid` the
/// Darcy mesh; pass 0 for the defaults.
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ki_problem_builtin(
    name: *const c_char,
    dim: usize,
    grid: usize,
    data_seed: u64,
    out: *mut *mut KiProblem,
) -> KiStatus {
    guard(|| {
        if name.is_null() {
            return Err(null("name"));
        }
        let name = CStr::from_ptr(name)
            .to_str()
            .map_err(|_| Failure(KiStatus::InvalidArgument, "name is not UTF-8".into()))?;
        let kind: ProblemKind = name.parse()?;
        let mut opts = ProblemOptions {
            data_seed,
            ..Default::default()
        };
        if dim > 0 {
            opts.dim = Some(dim);
        }
        if grid > 0 {
            opts.grid = grid;
        }
        store(out, build_problem(kind, &opts)?)
    })
}

#[derive(Clone, Copy)]
struct UserData(*mut c_void);

// The caller guarantees the callback tolerates concurrent use of user_data.
unsafe impl Send for UserData {}
unsafe impl Sync for UserData {}

struct CallbackModel {
    f: unsafe extern "C" fn(*mut c_void, *const f64, usize, *mut f64, usize) -> i32,
    user_data: UserData,
    n_params: usize,
    n_obs: usize,
}

impl ForwardModel for CallbackModel {
    fn input_dim(&self) -> usize {
        self.n_params
    }

    fn output_dim(&self) -> usize {
        self.n_obs
    }

    fn evaluate(&self, theta: &DVector<f64>) -> kalman_inversion::Result<DVector<f64>> {
        let mut out = vec![f64::NAN; self.n_obs];
        let code = unsafe { (self.f)(self.user_data.0, theta.as_ptr(), self.n_params, out.as_mut_ptr(), self.n_obs) };
        if code != 0 {
            return Err(Error::SolverFailure(format!("forward callback returned {code}")));
        }
        Ok(DVector::from_vec(out))
    }
}

/// Problem whose forward map is a caller-supplied function.
///
/// # Safety
/// As for [`ki_problem_linear`]; additionally `forward` and `user_data`
/// must stay valid for the lifetime of the returned handle.
#[no_mangle]
pub unsafe extern "C" fn ki_problem_callback(
    forward: KiForwardFn,
    user_data: *mut c_void,
    n_params: usize,
    n_obs: usize,
    y: *const f64,
    noise_cov: *const f64,
    prior_mean: *const f64,
    prior_cov: *const f64,
    out: *mut *mut KiProblem,
) -> KiStatus {
    guard(|| {
        let f = forward.ok_or_else(|| null("forward"))?;
        let (y, noise, r0, c0) = gaussian_parts(n_params, n_obs, y, noise_cov, prior_mean, prior_cov)?;
        let model = CallbackModel {
            f,
            user_data: UserData(user_data),
            n_params,
            n_obs,
        };
        store(out, InverseProblem::new(Arc::new(model), y, noise, r0, c0)?)
    })
}

/// # Safety
/// `problem` must be null or a handle from a `ki_problem_*` constructor that
/// has not been freed.
#[no_mangle]
pub unsafe extern "C" fn ki_problem_free(problem: *mut KiProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// # Safety
/// `problem` must be a live handle; the outputs must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn ki_problem_dims(problem: *const KiProblem, n_params: *mut usize, n_obs: *mut usize) -> KiStatus {
    guard(|| {
        let p = problem_ref(problem)?;
        if !n_params.is_null() {
            *n_params = p.n_params();
        }
        if !n_obs.is_null() {
            *n_obs = p.n_obs();
        }
        Ok(())
    })
}

/// Closed-form posterior of an affine problem: mean into `mean` (`n_params`
/// values) and row-major covariance into `cov` (`n_params²` values).
///
/// # Safety
/// `problem` must be a live handle; the buffers must be valid for the
/// stated lengths.
#[no_mangle]
pub unsafe extern "C" fn ki_problem_analytic_posterior(
    problem: *const KiProblem,
    mean: *mut f64,
    mean_len: usize,
    cov: *mut f64,
    cov_len: usize,
) -> KiStatus {
    guard(|| {
        let p = problem_ref(problem)?;
        let post = analytic_posterior(p)?;
        crate::run::copy_out(post.mean.as_slice(), mean, mean_len)?;
        crate::run::copy_out(post.covariance.transpose().as_slice(), cov, cov_len)
    })
}
