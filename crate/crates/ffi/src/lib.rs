//! C ABI over the `swgee` library.
//!
//! Trials and fits are opaque heap handles created by `swgee_*_new`/`swgee_fit`
//! and released with the matching `*_free`. Every fallible call returns a
//! [`SwgeeStatus`]; the message of the last failure on the calling thread is
//! available from [`swgee_last_error`]. Matrices are passed row-major,
//! clusters by periods.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use swgee::inference::{sandwich, Correction};
use swgee::{fit, Adjustment, CorrelationParams, FitResult, Link, ModelSpec, Structure, SwgeeError, TrialData};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SwgeeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Input = 3,
    Infeasible = 4,
    Unidentified = 5,
    NonConvergence = 6,
    Numerical = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SwgeeStructure {
    Independence = 0,
    Exchangeable = 1,
    NestedExchangeable = 2,
    ExponentialDecay = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SwgeeLink {
    Logit = 0,
    Log = 1,
    Identity = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SwgeeAdjustment {
    Uee = 0,
    Maee = 1,
}

/// Variance estimator: model-based or one of the four sandwich corrections.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SwgeeVariance {
    ModelBased = 0,
    Bc0 = 1,
    Bc1 = 2,
    Bc2 = 3,
    Bc3 = 4,
}

/// Opaque trial handle.
pub struct SwgeeTrial {
    data: TrialData,
}

/// Opaque fit handle; keeps a copy of the data it was fitted to.
pub struct SwgeeFit {
    result: FitResult,
    data: TrialData,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn status_of(e: &SwgeeError) -> SwgeeStatus {
    match e {
        SwgeeError::Input(_) | SwgeeError::Schema { .. } | SwgeeError::Integrity(_) => SwgeeStatus::Input,
        SwgeeError::InfeasibleParameters { .. } | SwgeeError::Feasibility { .. } => SwgeeStatus::Infeasible,
        SwgeeError::Unidentified(_) | SwgeeError::DegenerateDesign(_) => SwgeeStatus::Unidentified,
        SwgeeError::NonConvergence { .. } => SwgeeStatus::NonConvergence,
        SwgeeError::InvalidConfig(_) | SwgeeError::DegreesOfFreedom(_) | SwgeeError::OracleScale { .. } => {
            SwgeeStatus::InvalidArgument
        }
        _ => SwgeeStatus::Numerical,
    }
}

fn fail(e: SwgeeError) -> SwgeeStatus {
    let status = status_of(&e);
    set_error(e.to_string());
    status
}

fn guard(f: impl FnOnce() -> SwgeeStatus) -> SwgeeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            SwgeeStatus::Panic
        }
    }
}

fn null_arg(name: &str) -> SwgeeStatus {
    set_error(format!("{name} is null"));
    SwgeeStatus::NullPointer
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn swgee_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn swgee_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a trial from row-major `n_clusters x n_periods` matrices of
/// cluster-period sizes, event totals and 0/1 treatment indicators.
///
/// # Safety
/// Each matrix pointer must reference `n_clusters * n_periods` readable
/// elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn swgee_trial_new(
    n_clusters: usize,
    n_periods: usize,
    sizes: *const u64,
    totals: *const u64,
    treatment: *const u8,
    out: *mut *mut SwgeeTrial,
) -> SwgeeStatus {
    guard(|| {
        if out.is_null() {
            return null_arg("out");
        }
        if sizes.is_null() || totals.is_null() || treatment.is_null() {
            return null_arg("matrix");
        }
        let Some(cells) = n_clusters.checked_mul(n_periods) else {
            set_error("matrix dimensions overflow");
            return SwgeeStatus::InvalidArgument;
        };
        // SAFETY: caller guarantees `cells` readable elements behind each pointer.
        let (s, y, t) = unsafe {
            (
                std::slice::from_raw_parts(sizes, cells),
                std::slice::from_raw_parts(totals, cells),
                std::slice::from_raw_parts(treatment, cells),
            )
        };
        let rows = |v: &[u64]| v.chunks(n_periods.max(1)).map(<[u64]>::to_vec).collect::<Vec<_>>();
        let t = t.chunks(n_periods.max(1)).map(<[u8]>::to_vec).collect();
        match TrialData::from_matrices(rows(s), rows(y), t) {
            Ok(data) => {
                // SAFETY: checked non-null above.
                unsafe { *out = Box::into_raw(Box::new(SwgeeTrial { data })) };
                SwgeeStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Reads a trial from a CSV file: cluster-period rows
/// (`cluster,period,treatment,n,y`) or, with `individual` set, one row per
/// participant (`cluster,period,treatment,outcome`).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn swgee_trial_from_csv(
    path: *const c_char,
    individual: bool,
    out: *mut *mut SwgeeTrial,
) -> SwgeeStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return null_arg("path or out");
        }
        // SAFETY: caller guarantees a NUL-terminated string.
        let path = unsafe { CStr::from_ptr(path) }.to_string_lossy().into_owned();
        let file = match std::fs::File::open(&path) {
            Ok(f) => f,
            Err(e) => return fail(SwgeeError::Input(format!("cannot open {path}: {e}"))),
        };
        let parsed = if individual {
            swgee::data::ingest_individual(file)
        } else {
            swgee::data::ingest_cluster_period(file)
        };
        match parsed {
            Ok(data) => {
                // SAFETY: checked non-null above.
                unsafe { *out = Box::into_raw(Box::new(SwgeeTrial { data })) };
                SwgeeStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `trial` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn swgee_trial_free(trial: *mut SwgeeTrial) {
    if !trial.is_null() {
        // SAFETY: handle was created by Box::into_raw.
        drop(unsafe { Box::from_raw(trial) });
    }
}

/// # Safety
/// `trial` must be a live handle; the output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn swgee_trial_dims(
    trial: *const SwgeeTrial,
    n_clusters: *mut usize,
    n_periods: *mut usize,
) -> SwgeeStatus {
    guard(|| {
        // SAFETY: caller guarantees a live handle.
        let Some(t) = (unsafe { trial.as_ref() }) else { return null_arg("trial") };
        if n_clusters.is_null() || n_periods.is_null() {
            return null_arg("output");
        }
        // SAFETY: checked non-null above.
        unsafe {
            *n_clusters = t.data.n_clusters();
            *n_periods = t.data.n_periods();
        }
        SwgeeStatus::Ok
    })
}

/// Fits the marginal model with default iteration controls. A fit that
/// stops at the iteration limit still returns a handle; check
/// [`swgee_fit_converged`].
///
/// # Safety
/// `trial` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn swgee_fit(
    trial: *const SwgeeTrial,
    link: SwgeeLink,
    structure: SwgeeStructure,
    adjustment: SwgeeAdjustment,
    out: *mut *mut SwgeeFit,
) -> SwgeeStatus {
    guard(|| {
        // SAFETY: caller guarantees a live handle.
        let Some(t) = (unsafe { trial.as_ref() }) else { return null_arg("trial") };
        if out.is_null() {
            return null_arg("out");
        }
        let structure = match structure {
            SwgeeStructure::Independence => Structure::Independence,
            SwgeeStructure::Exchangeable => Structure::Exchangeable,
            SwgeeStructure::NestedExchangeable => Structure::NestedExchangeable,
            SwgeeStructure::ExponentialDecay => Structure::ExponentialDecay,
        };
        let adjustment = match adjustment {
            SwgeeAdjustment::Uee => Adjustment::Uee,
            SwgeeAdjustment::Maee => Adjustment::Maee,
        };
        let mut spec = ModelSpec::new(structure, adjustment);
        spec.link = match link {
            SwgeeLink::Logit => Link::Logit,
            SwgeeLink::Log => Link::Log,
            SwgeeLink::Identity => Link::Identity,
        };
        match fit(&t.data, &spec) {
            Ok(result) => {
                let handle = SwgeeFit { result, data: t.data.clone() };
                // SAFETY: checked non-null above.
                unsafe { *out = Box::into_raw(Box::new(handle)) };
                SwgeeStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `fit` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn swgee_fit_free(fit: *mut SwgeeFit) {
    if !fit.is_null() {
        // SAFETY: handle was created by Box::into_raw.
        drop(unsafe { Box::from_raw(fit) });
    }
}

/// Returns 1 if converged, 0 if not, -1 for a null handle.
///
/// # Safety
/// `fit` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn swgee_fit_converged(fit: *const SwgeeFit) -> i32 {
    // SAFETY: caller guarantees null or a live handle.
    match unsafe { fit.as_ref() } {
        Some(f) => i32::from(f.result.converged),
        None => -1,
    }
}

unsafe fn copy_out(values: &[f64], buf: *mut f64, len: usize, written: *mut usize) -> SwgeeStatus {
    if !written.is_null() {
        // SAFETY: caller-provided writable pointer.
        unsafe { *written = values.len() };
    }
    if buf.is_null() {
        return null_arg("buffer");
    }
    if len < values.len() {
        set_error(format!("buffer holds {len} values, {} needed", values.len()));
        return SwgeeStatus::BufferTooSmall;
    }
    // SAFETY: caller guarantees `len` writable elements.
    unsafe { ptr::copy_nonoverlapping(values.as_ptr(), buf, values.len()) };
    SwgeeStatus::Ok
}

/// Copies the mean parameters (period effects, then the treatment effect)
/// into `buf`. `written` (optional) receives the number of values; when the
/// buffer is too small it still receives the required length.
///
/// # Safety
/// `fit` must be a live handle and `buf` must hold `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn swgee_fit_theta(
    fit: *const SwgeeFit,
    buf: *mut f64,
    len: usize,
    written: *mut usize,
) -> SwgeeStatus {
    guard(|| {
        // SAFETY: caller guarantees a live handle.
        let Some(f) = (unsafe { fit.as_ref() }) else { return null_arg("fit") };
        // SAFETY: forwarded caller guarantees.
        unsafe { copy_out(&f.result.theta, buf, len, written) }
    })
}

/// Copies the correlation parameters (none for independence).
///
/// # Safety
/// As for [`swgee_fit_theta`].
#[no_mangle]
pub unsafe extern "C" fn swgee_fit_alpha(
    fit: *const SwgeeFit,
    buf: *mut f64,
    len: usize,
    written: *mut usize,
) -> SwgeeStatus {
    guard(|| {
        // SAFETY: caller guarantees a live handle.
        let Some(f) = (unsafe { fit.as_ref() }) else { return null_arg("fit") };
        let values = CorrelationParams::values(&f.result.alpha);
        // SAFETY: forwarded caller guarantees.
        unsafe { copy_out(&values, buf, len, written) }
    })
}

/// Standard errors under the chosen variance estimator: mean then
/// correlation parameters for the sandwich corrections, mean parameters only
/// for the model-based estimator.
///
/// # Safety
/// As for [`swgee_fit_theta`].
#[no_mangle]
pub unsafe extern "C" fn swgee_fit_standard_errors(
    fit: *const SwgeeFit,
    variance: SwgeeVariance,
    buf: *mut f64,
    len: usize,
    written: *mut usize,
) -> SwgeeStatus {
    guard(|| {
        // SAFETY: caller guarantees a live handle.
        let Some(f) = (unsafe { fit.as_ref() }) else { return null_arg("fit") };
        let cov = match variance {
            SwgeeVariance::ModelBased => swgee::inference::model_based(&f.result, &f.data),
            SwgeeVariance::Bc0 => sandwich(&f.result, &f.data, Correction::BC0, false),
            SwgeeVariance::Bc1 => sandwich(&f.result, &f.data, Correction::BC1, false),
            SwgeeVariance::Bc2 => sandwich(&f.result, &f.data, Correction::BC2, false),
            SwgeeVariance::Bc3 => sandwich(&f.result, &f.data, Correction::BC3, false),
        };
        match cov {
            Ok(c) => {
                let se: Vec<f64> = c.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect();
                // SAFETY: forwarded caller guarantees.
                unsafe { copy_out(&se, buf, len, written) }
            }
            Err(e) => fail(e),
        }
    })
}
