//! C ABI for the slq-pilot solvers.
//!
//! Everything crosses the boundary through two opaque handles — a loaded
//! configuration and a solver solution — plus accessors that copy matrices
//! into caller-owned buffers. Functions return [`SlqStatus`]; on any failure
//! the thread-local message from [`slq_last_error_message`] carries the
//! detail. The generated header lives in `include/slq_pilot.h`.
//!
//! Ownership rules: every `*_load`/`*_solve` out-pointer hands the caller an
//! owned handle that must go back through the matching `*_free`. Accessors
//! never allocate; `slq_last_error_message` stays valid until the next
//! failing call on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use slq_pilot::config::{load_config, Overrides, RunConfig};
use slq_pilot::datadriven::{self, SolveOptions};
use slq_pilot::oracle::{policy_iteration, sare_residual};
use slq_pilot::sdesim::{accumulate_data, simulate_batch};
use slq_pilot::SlqError;

/// Result of every fallible call in this ABI.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlqStatus {
    /// Success.
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// File could not be read or written.
    Io = 3,
    /// Configuration text failed to parse.
    Parse = 4,
    /// Configuration parsed but failed validation.
    Validation = 5,
    /// Collected data cannot identify a unique solution.
    RankDeficient = 6,
    /// Iteration cap reached before the tolerance.
    NotConverged = 7,
    /// Numerical breakdown inside a solver.
    Numerical = 8,
    /// A destination buffer had the wrong length.
    BufferSize = 9,
    /// Unexpected internal failure (panic caught at the boundary).
    Internal = 10,
}

/// Opaque: a fully validated run configuration.
pub struct SlqConfig {
    inner: RunConfig,
}

/// Opaque: the outcome of one solver run.
pub struct SlqSolution {
    n: usize,
    m: usize,
    /// Row-major `n x n`.
    p: Vec<f64>,
    /// Row-major `m x n`.
    k: Vec<f64>,
    iterations: usize,
    converged: bool,
    residual: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_for(err: &SlqError) -> SlqStatus {
    match err {
        SlqError::Io(_) => SlqStatus::Io,
        SlqError::Parse(_) => SlqStatus::Parse,
        SlqError::InvalidConfig(_)
        | SlqError::Dimension(_)
        | SlqError::NotTriangularLength { .. }
        | SlqError::RNotPositiveDefinite { .. }
        | SlqError::SchurComplementNotPositiveDefinite { .. }
        | SlqError::NotStabilizer { .. } => SlqStatus::Validation,
        SlqError::RankDeficient { .. } => SlqStatus::RankDeficient,
        SlqError::NotConverged { .. } => SlqStatus::NotConverged,
        SlqError::SingularGenerator { .. }
        | SlqError::NumericalBreakdown(_)
        | SlqError::TrajectoryBlowup { .. } => SlqStatus::Numerical,
    }
}

fn fail(err: &SlqError) -> SlqStatus {
    set_error(&err.to_string());
    status_for(err)
}

/// Shields the ABI from panics and turns them into `Internal`.
fn guarded<F: FnOnce() -> SlqStatus>(body: F) -> SlqStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            SlqStatus::Internal
        }
    }
}

unsafe fn write_handle<T>(out: *mut *mut T, value: T) -> SlqStatus {
    if out.is_null() {
        set_error("out pointer is null");
        return SlqStatus::NullPointer;
    }
    *out = Box::into_raw(Box::new(value));
    SlqStatus::Ok
}

/// Loads and validates a TOML run configuration from a file path.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer; the
/// returned handle must be released with [`slq_config_free`].
#[no_mangle]
pub unsafe extern "C" fn slq_config_load(
    path: *const c_char,
    out: *mut *mut SlqConfig,
) -> SlqStatus {
    guarded(|| {
        if path.is_null() {
            set_error("path is null");
            return SlqStatus::NullPointer;
        }
        let path = match CStr::from_ptr(path).to_str() {
            Ok(p) => p,
            Err(_) => {
                set_error("path is not valid UTF-8");
                return SlqStatus::InvalidUtf8;
            }
        };
        match load_config(Path::new(path), &Overrides::default()) {
            Ok(cfg) => write_handle(out, SlqConfig { inner: cfg }),
            Err(e) => fail(&e),
        }
    })
}

/// Loads and validates a configuration from TOML text.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer; the
/// returned handle must be released with [`slq_config_free`].
#[no_mangle]
pub unsafe extern "C" fn slq_config_load_str(
    text: *const c_char,
    out: *mut *mut SlqConfig,
) -> SlqStatus {
    guarded(|| {
        if text.is_null() {
            set_error("text is null");
            return SlqStatus::NullPointer;
        }
        let text = match CStr::from_ptr(text).to_str() {
            Ok(t) => t,
            Err(_) => {
                set_error("text is not valid UTF-8");
                return SlqStatus::InvalidUtf8;
            }
        };
        let raw = match toml::from_str(text) {
            Ok(raw) => raw,
            Err(e) => {
                set_error(&format!("config parse error: {e}"));
                return SlqStatus::Parse;
            }
        };
        match slq_pilot::config::resolve_config(raw, &Overrides::default()) {
            Ok(cfg) => write_handle(out, SlqConfig { inner: cfg }),
            Err(e) => fail(&e),
        }
    })
}

/// Releases a configuration handle. Null is a no-op.
///
/// # Safety
/// `cfg` must have come from a load call and not been freed before.
#[no_mangle]
pub unsafe extern "C" fn slq_config_free(cfg: *mut SlqConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// State dimension `n`, or 0 when `cfg` is null.
///
/// # Safety
/// `cfg` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn slq_config_state_dim(cfg: *const SlqConfig) -> usize {
    cfg.as_ref().map_or(0, |c| c.inner.problem.model.n())
}

/// Input dimension `m`, or 0 when `cfg` is null.
///
/// # Safety
/// `cfg` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn slq_config_input_dim(cfg: *const SlqConfig) -> usize {
    cfg.as_ref().map_or(0, |c| c.inner.problem.model.m())
}

/// Overrides the Monte-Carlo seed.
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn slq_config_set_seed(cfg: *mut SlqConfig, seed: u64) -> SlqStatus {
    guarded(|| match cfg.as_mut() {
        Some(c) => {
            c.inner.sim.seed = seed;
            c.inner.echo.sim.seed = Some(seed);
            SlqStatus::Ok
        }
        None => {
            set_error("cfg is null");
            SlqStatus::NullPointer
        }
    })
}

/// Overrides the Monte-Carlo path count (must be at least 1).
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn slq_config_set_paths(cfg: *mut SlqConfig, paths: usize) -> SlqStatus {
    guarded(|| match cfg.as_mut() {
        Some(c) if paths > 0 => {
            c.inner.sim.paths = paths;
            c.inner.echo.sim.paths = Some(paths);
            SlqStatus::Ok
        }
        Some(_) => {
            set_error("paths must be at least 1");
            SlqStatus::Validation
        }
        None => {
            set_error("cfg is null");
            SlqStatus::NullPointer
        }
    })
}

fn solution_from_parts(
    cfg: &RunConfig,
    p: &slq_pilot::matops::SymMatrix,
    k: &slq_pilot::problem::Gain,
    iterations: usize,
    converged: bool,
) -> SlqSolution {
    let n = cfg.problem.model.n();
    let m = cfg.problem.model.m();
    let residual = sare_residual(&cfg.problem.model, &cfg.problem.cost, p, k).norm();
    let mut p_rows = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            p_rows.push(p.as_matrix()[(i, j)]);
        }
    }
    let mut k_rows = Vec::with_capacity(m * n);
    for i in 0..m {
        for j in 0..n {
            k_rows.push(k.as_matrix()[(i, j)]);
        }
    }
    SlqSolution {
        n,
        m,
        p: p_rows,
        k: k_rows,
        iterations,
        converged,
        residual,
    }
}

/// Runs model-based policy iteration on a loaded configuration.
///
/// # Safety
/// `cfg` must be a live handle and `out` a valid pointer; the returned
/// handle must be released with [`slq_solution_free`].
#[no_mangle]
pub unsafe extern "C" fn slq_solve_oracle(
    cfg: *const SlqConfig,
    out: *mut *mut SlqSolution,
) -> SlqStatus {
    guarded(|| {
        let cfg = match cfg.as_ref() {
            Some(c) => &c.inner,
            None => {
                set_error("cfg is null");
                return SlqStatus::NullPointer;
            }
        };
        match policy_iteration(&cfg.problem, cfg.solver.eps_oracle, cfg.solver.max_iter) {
            Ok(report) => {
                let solution = solution_from_parts(
                    cfg,
                    &report.p_star,
                    &report.k_star,
                    report.iterations,
                    report.converged,
                );
                write_handle(out, solution)
            }
            Err(e) => fail(&e),
        }
    })
}

/// Simulates the configured ensemble, accumulates the data matrices and
/// runs the data-driven policy iteration.
///
/// # Safety
/// `cfg` must be a live handle and `out` a valid pointer; the returned
/// handle must be released with [`slq_solution_free`].
#[no_mangle]
pub unsafe extern "C" fn slq_solve_data_driven(
    cfg: *const SlqConfig,
    out: *mut *mut SlqSolution,
) -> SlqStatus {
    guarded(|| {
        let cfg = match cfg.as_ref() {
            Some(c) => &c.inner,
            None => {
                set_error("cfg is null");
                return SlqStatus::NullPointer;
            }
        };
        let result = (|| -> Result<SlqSolution, SlqError> {
            let batch = simulate_batch(&cfg.problem.model, &cfg.problem.k0, &cfg.sim)?;
            let data = accumulate_data(&batch, &cfg.sim)?;
            let opts = SolveOptions {
                eps: cfg.solver.eps_dd,
                max_iter: cfg.solver.max_iter,
                rank_tol: cfg.solver.rank_tol,
            };
            let report = datadriven::policy_iteration(
                &data,
                cfg.problem.model.d(),
                &cfg.problem.cost,
                &cfg.problem.k0,
                &opts,
            )?;
            Ok(solution_from_parts(
                cfg,
                &report.p_tilde,
                &report.k_tilde,
                report.iterations,
                report.converged,
            ))
        })();
        match result {
            Ok(solution) => write_handle(out, solution),
            Err(e) => fail(&e),
        }
    })
}

/// Releases a solution handle. Null is a no-op.
///
/// # Safety
/// `solution` must have come from a solve call and not been freed before.
#[no_mangle]
pub unsafe extern "C" fn slq_solution_free(solution: *mut SlqSolution) {
    if !solution.is_null() {
        drop(Box::from_raw(solution));
    }
}

/// Iterations until the stopping rule fired; 0 when `solution` is null.
///
/// # Safety
/// `solution` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn slq_solution_iterations(solution: *const SlqSolution) -> usize {
    solution.as_ref().map_or(0, |s| s.iterations)
}

/// Whether the stopping tolerance was met.
///
/// # Safety
/// `solution` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn slq_solution_converged(solution: *const SlqSolution) -> bool {
    solution.as_ref().is_some_and(|s| s.converged)
}

/// Frobenius norm of the Riccati residual at the solution pair; NaN when
/// `solution` is null.
///
/// # Safety
/// `solution` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn slq_solution_residual(solution: *const SlqSolution) -> f64 {
    solution.as_ref().map_or(f64::NAN, |s| s.residual)
}

unsafe fn copy_out(src: &[f64], buf: *mut f64, len: usize) -> SlqStatus {
    if buf.is_null() {
        set_error("buffer is null");
        return SlqStatus::NullPointer;
    }
    if len != src.len() {
        set_error(&format!(
            "buffer holds {len} values, expected {}",
            src.len()
        ));
        return SlqStatus::BufferSize;
    }
    std::ptr::copy_nonoverlapping(src.as_ptr(), buf, len);
    SlqStatus::Ok
}

/// Copies the value matrix `P` into `buf`, row-major; `len` must equal
/// `n * n` (see [`slq_config_state_dim`]).
///
/// # Safety
/// `solution` must be a live handle; `buf` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn slq_solution_value_matrix(
    solution: *const SlqSolution,
    buf: *mut f64,
    len: usize,
) -> SlqStatus {
    guarded(|| match solution.as_ref() {
        Some(s) => {
            debug_assert_eq!(s.p.len(), s.n * s.n);
            copy_out(&s.p, buf, len)
        }
        None => {
            set_error("solution is null");
            SlqStatus::NullPointer
        }
    })
}

/// Copies the feedback gain `K` into `buf`, row-major; `len` must equal
/// `m * n`.
///
/// # Safety
/// `solution` must be a live handle; `buf` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn slq_solution_gain(
    solution: *const SlqSolution,
    buf: *mut f64,
    len: usize,
) -> SlqStatus {
    guarded(|| match solution.as_ref() {
        Some(s) => {
            debug_assert_eq!(s.k.len(), s.m * s.n);
            copy_out(&s.k, buf, len)
        }
        None => {
            set_error("solution is null");
            SlqStatus::NullPointer
        }
    })
}

/// Message for the most recent failure on this thread; empty string when
/// nothing failed yet. Valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn slq_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Crate version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn slq_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr() as *const c_char
}
