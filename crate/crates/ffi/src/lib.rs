//! C ABI over `mn_delta`.
//!
//! Objects are opaque handles created by `mn_*_new`/`mn_*_solve` calls and
//! released with the matching `_free`. Every fallible call returns an
//! [`MnStatus`]; details of the last failure on the calling thread are
//! available from [`mn_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use mn_delta::cpmatch::{sample_covariance, solve_cp_best_effort, threshold, AdmmOptions, CpStatus};
use mn_delta::model::{eval_features, Dataset, EdgeSet, FeatureMap};
use mn_delta::solver::{lambda_max, solve_group_lasso, SolverOptions, Termination};
use mn_delta::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    InvalidData = 4,
    Infeasible = 5,
    Numeric = 6,
    Io = 7,
    Panic = 8,
}

/// Bivariate feature used by KLIEP.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MnFeature {
    Product = 0,
    Rbf = 1,
}

/// Samples-by-variables data matrix.
pub struct MnDataset(Dataset);

/// Estimated change: one coefficient per edge `(u, v)`, `u >= v`, 0-based.
pub struct MnSolution {
    edges: Arc<EdgeSet>,
    values: Vec<f64>,
    lambda: f64,
    objective: f64,
    iterations: usize,
    converged: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> MnStatus {
    match e {
        Error::InvalidEdge { .. } | Error::Argument(_) | Error::Config(_) => MnStatus::InvalidArgument,
        Error::Shape(_) | Error::Size { .. } => MnStatus::ShapeMismatch,
        Error::Data(_) | Error::Format { .. } | Error::Json(_) => MnStatus::InvalidData,
        Error::Infeasible(_) => MnStatus::Infeasible,
        Error::Divergence { .. } | Error::Numeric(_) | Error::Generation(_) => MnStatus::Numeric,
        Error::Io(_) => MnStatus::Io,
    }
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), (MnStatus, String)>) -> MnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MnStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            MnStatus::Panic
        }
    }
}

fn lib<T>(r: mn_delta::Result<T>) -> Result<T, (MnStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (MnStatus, String) {
    (MnStatus::NullPointer, format!("{what} is null"))
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mn_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies an `n x m` row-major matrix into a new dataset.
///
/// # Safety
/// `values` must point to `n * m` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mn_dataset_new(
    values: *const f64,
    n: usize,
    m: usize,
    out: *mut *mut MnDataset,
) -> MnStatus {
    guard(|| {
        if values.is_null() {
            return Err(null("values"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let len = n
            .checked_mul(m)
            .ok_or((MnStatus::InvalidArgument, "n * m overflows".to_string()))?;
        let data = std::slice::from_raw_parts(values, len).to_vec();
        let ds = lib(Dataset::new(n, m, data))?;
        *out = Box::into_raw(Box::new(MnDataset(ds)));
        Ok(())
    })
}

/// Reads a headerless numeric CSV file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mn_dataset_read_csv(path: *const c_char, out: *mut *mut MnDataset) -> MnStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| (MnStatus::InvalidArgument, "path is not UTF-8".to_string()))?;
        let ds = lib(Dataset::read_csv(path))?;
        *out = Box::into_raw(Box::new(MnDataset(ds)));
        Ok(())
    })
}

/// # Safety
/// `ds` must be null or a handle from this library that was not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mn_dataset_free(ds: *mut MnDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// # Safety
/// `ds` must be a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn mn_dataset_rows(ds: *const MnDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.n())
}

/// # Safety
/// `ds` must be a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn mn_dataset_cols(ds: *const MnDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.m())
}

fn feature_map(kind: MnFeature, bandwidth: f64) -> Result<FeatureMap, (MnStatus, String)> {
    match kind {
        MnFeature::Product => Ok(FeatureMap::Product),
        MnFeature::Rbf => lib(FeatureMap::rbf(bandwidth)),
    }
}

unsafe fn pair<'a>(
    xp: *const MnDataset,
    xq: *const MnDataset,
) -> Result<(&'a Dataset, &'a Dataset), (MnStatus, String)> {
    let p = xp.as_ref().ok_or_else(|| null("xp"))?;
    let q = xq.as_ref().ok_or_else(|| null("xq"))?;
    if p.0.m() != q.0.m() {
        return Err((
            MnStatus::ShapeMismatch,
            format!("xp has {} columns, xq has {}", p.0.m(), q.0.m()),
        ));
    }
    Ok((&p.0, &q.0))
}

/// Smallest `lambda` at which the KLIEP estimate is exactly zero.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mn_kliep_lambda_max(
    xp: *const MnDataset,
    xq: *const MnDataset,
    feature: MnFeature,
    bandwidth: f64,
    out: *mut f64,
) -> MnStatus {
    guard(|| {
        let (p, q) = pair(xp, xq)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let fmap = feature_map(feature, bandwidth)?;
        let edges = Arc::new(lib(EdgeSet::full(p.m()))?);
        let fp = lib(eval_features(p, edges.clone(), fmap))?;
        let fq = lib(eval_features(q, edges, fmap))?;
        *out = lib(lambda_max(&fp, &fq))?;
        Ok(())
    })
}

/// Group-lasso KLIEP over all pairs `u >= v`. `max_iterations = 0` and
/// `tolerance <= 0` select the defaults.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mn_kliep_solve(
    xp: *const MnDataset,
    xq: *const MnDataset,
    feature: MnFeature,
    bandwidth: f64,
    lambda: f64,
    max_iterations: usize,
    tolerance: f64,
    out: *mut *mut MnSolution,
) -> MnStatus {
    guard(|| {
        let (p, q) = pair(xp, xq)?;
        if out.is_null() {
            return Err(null("out"));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err((MnStatus::InvalidArgument, format!("lambda must be >= 0, got {lambda}")));
        }
        let fmap = feature_map(feature, bandwidth)?;
        let edges = Arc::new(lib(EdgeSet::full(p.m()))?);
        let fp = lib(eval_features(p, edges.clone(), fmap))?;
        let fq = lib(eval_features(q, edges.clone(), fmap))?;
        let mut opts = SolverOptions::default();
        if max_iterations > 0 {
            opts.max_iterations = max_iterations;
        }
        if tolerance > 0.0 {
            opts.tolerance = tolerance;
        }
        let (delta, report) = lib(solve_group_lasso(&fp, &fq, lambda, &opts, None))?;
        *out = Box::into_raw(Box::new(MnSolution {
            edges,
            values: delta.into_coeffs(),
            lambda,
            objective: report.objective(),
            iterations: report.iterations,
            converged: report.termination == Termination::Converged,
        }));
        Ok(())
    })
}

/// Covariance-precision matching with feasibility slack `epsilon`, entries
/// below `tau` in magnitude zeroed. An estimate that never became feasible
/// is still returned, flagged as not converged.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mn_cp_solve(
    xp: *const MnDataset,
    xq: *const MnDataset,
    epsilon: f64,
    tau: f64,
    out: *mut *mut MnSolution,
) -> MnStatus {
    guard(|| {
        let (p, q) = pair(xp, xq)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let (sp, sq) = (sample_covariance(p), sample_covariance(q));
        let (delta, report) = lib(solve_cp_best_effort(&sp, &sq, epsilon, &AdmmOptions::default()))?;
        let delta = threshold(&delta, tau.max(0.0));
        let edges = Arc::new(lib(EdgeSet::full(p.m()))?);
        let values = edges.edges().iter().map(|&(u, v)| delta[(u, v)]).collect();
        *out = Box::into_raw(Box::new(MnSolution {
            edges,
            values,
            lambda: tau,
            objective: delta.iter().map(|x| x.abs()).sum(),
            iterations: report.iterations,
            converged: report.status == CpStatus::Converged,
        }));
        Ok(())
    })
}

/// # Safety
/// `sol` must be null or a handle from this library that was not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mn_solution_free(sol: *mut MnSolution) {
    if !sol.is_null() {
        drop(Box::from_raw(sol));
    }
}

/// Number of candidate edges (all pairs `u >= v`).
///
/// # Safety
/// `sol` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mn_solution_edge_count(sol: *const MnSolution) -> usize {
    sol.as_ref().map_or(0, |s| s.edges.len())
}

/// Number of edges with a nonzero coefficient.
///
/// # Safety
/// `sol` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mn_solution_active_count(sol: *const MnSolution) -> usize {
    sol.as_ref().map_or(0, |s| s.values.iter().filter(|&&x| x != 0.0).count())
}

/// Edge `k` in sorted `(u, v)` order with its coefficient.
///
/// # Safety
/// `sol` must be a live handle; output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn mn_solution_edge(
    sol: *const MnSolution,
    k: usize,
    u: *mut usize,
    v: *mut usize,
    value: *mut f64,
) -> MnStatus {
    guard(|| {
        let s = sol.as_ref().ok_or_else(|| null("sol"))?;
        if u.is_null() || v.is_null() || value.is_null() {
            return Err(null("output pointer"));
        }
        if k >= s.edges.len() {
            return Err((
                MnStatus::InvalidArgument,
                format!("edge {k} out of range ({} edges)", s.edges.len()),
            ));
        }
        let (a, b) = s.edges.get(k);
        *u = a;
        *v = b;
        *value = s.values[k];
        Ok(())
    })
}

/// The regularization value the solution was computed at (`tau` for CP).
///
/// # Safety
/// `sol` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mn_solution_lambda(sol: *const MnSolution) -> f64 {
    sol.as_ref().map_or(f64::NAN, |s| s.lambda)
}

/// # Safety
/// `sol` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mn_solution_objective(sol: *const MnSolution) -> f64 {
    sol.as_ref().map_or(f64::NAN, |s| s.objective)
}

/// # Safety
/// `sol` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mn_solution_iterations(sol: *const MnSolution) -> usize {
    sol.as_ref().map_or(0, |s| s.iterations)
}

/// 1 when the solver met its tolerance, 0 otherwise.
///
/// # Safety
/// `sol` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mn_solution_converged(sol: *const MnSolution) -> i32 {
    sol.as_ref().map_or(0, |s| s.converged as i32)
}
