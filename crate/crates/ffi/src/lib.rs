//! C interface to the kernel normality test.
//!
//! Datasets and reports are opaque handles owned by the caller and released
//! with the matching `_free` function. Every fallible call returns a
//! [`KntStatus`]; on failure [`knt_last_error_message`] describes the error
//! for the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nalgebra::{DMatrix, DVector};

use knt::embeddings::median_heuristic;
use knt::io::to_json;
use knt::{
    alpha_schedule, run_test, select_rank, AlphaMode, Bootstrap, DataMode, Dataset, Error,
    KnownParams, Linearization, NullModel, OuterKernel, RankSelectConfig, TestConfig, TestReport,
};

/// Opaque dataset handle.
pub struct KntDataset(Dataset);

/// Opaque test report handle.
pub struct KntReport(TestReport);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KntStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidData = 3,
    Precondition = 4,
    Numerical = 5,
    Unsupported = 6,
    Io = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KntKernel {
    Gaussian = 0,
    Exponential = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KntModel {
    Full = 0,
    Known = 1,
    KnownMean = 2,
    Rank = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KntBootstrap {
    Fast = 0,
    Slow = 1,
    Both = 2,
}

/// Test settings. Obtain defaults from [`knt_test_config_default`].
///
/// `sigma <= 0` selects the median heuristic. For `KNT_MODEL_KNOWN` and
/// `KNT_MODEL_KNOWN_MEAN`, `known_mean` points to `known_dim` values and
/// `known_cov` (known model only) to a row-major `known_dim x known_dim`
/// matrix; in gram mode both are coefficients on the observations.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct KntTestConfig {
    pub kernel: KntKernel,
    pub sigma: f64,
    pub model: KntModel,
    pub rank: usize,
    pub alpha: f64,
    pub replications: usize,
    pub seed: u64,
    pub bootstrap: KntBootstrap,
    pub fd_step: f64,
    pub known_mean: *const f64,
    pub known_cov: *const f64,
    pub known_dim: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(err: &Error) -> KntStatus {
    match err.root() {
        Error::InvalidArgument(_) => KntStatus::InvalidArgument,
        Error::InvalidData(_) | Error::Csv(_) | Error::Json(_) => KntStatus::InvalidData,
        Error::Precondition(_)
        | Error::RankDeficient(_)
        | Error::Representation(_)
        | Error::Nondifferentiable(_) => KntStatus::Precondition,
        Error::SingularOperator(_) | Error::Linearization(_) | Error::Numerical(_) => {
            KntStatus::Numerical
        }
        Error::Unsupported(_) => KntStatus::Unsupported,
        Error::Io(_) => KntStatus::Io,
        Error::Context { .. } => unreachable!("root strips context"),
    }
}

/// Run `f`, translating errors and panics into a status.
fn guard<F: FnOnce() -> Result<(), KntStatus>>(f: F) -> KntStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => KntStatus::Ok,
        Ok(Err(status)) => status,
        Err(_) => {
            set_error("internal panic".into());
            KntStatus::Panic
        }
    }
}

fn fail(err: Error) -> KntStatus {
    let status = status_of(&err);
    set_error(err.to_string());
    status
}

fn null(what: &str) -> KntStatus {
    set_error(format!("{what} is null"));
    KntStatus::NullPointer
}

fn invalid(msg: &str) -> KntStatus {
    set_error(msg.to_string());
    KntStatus::InvalidArgument
}

/// # Safety
/// `data` must point to `rows * cols` readable doubles.
unsafe fn row_major(data: *const f64, rows: usize, cols: usize) -> Result<DMatrix<f64>, KntStatus> {
    if data.is_null() {
        return Err(null("data"));
    }
    let len = rows.checked_mul(cols).ok_or_else(|| invalid("matrix size overflows"))?;
    let slice = std::slice::from_raw_parts(data, len);
    Ok(DMatrix::from_row_slice(rows, cols, slice))
}

/// Defaults: gaussian kernel with median heuristic, full model, alpha 0.05,
/// 250 fast replications, seed 0, finite-difference step 1e-5.
#[no_mangle]
pub extern "C" fn knt_test_config_default() -> KntTestConfig {
    KntTestConfig {
        kernel: KntKernel::Gaussian,
        sigma: 0.0,
        model: KntModel::Full,
        rank: 0,
        alpha: 0.05,
        replications: 250,
        seed: 0,
        bootstrap: KntBootstrap::Fast,
        fd_step: 1e-5,
        known_mean: ptr::null(),
        known_cov: ptr::null(),
        known_dim: 0,
    }
}

/// Copy `n` row-major observations of dimension `d`.
///
/// # Safety
/// `data` must point to `n * d` doubles and `out` to writable storage for a handle.
#[no_mangle]
pub unsafe extern "C" fn knt_dataset_from_vectors(
    data: *const f64,
    n: usize,
    d: usize,
    out: *mut *mut KntDataset,
) -> KntStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let m = row_major(data, n, d)?;
        let ds = Dataset::from_vectors(m).map_err(fail)?;
        *out = Box::into_raw(Box::new(KntDataset(ds)));
        Ok(())
    })
}

/// Copy an `n x n` row-major Gram matrix.
///
/// # Safety
/// `data` must point to `n * n` doubles and `out` to writable storage for a handle.
#[no_mangle]
pub unsafe extern "C" fn knt_dataset_from_gram(
    data: *const f64,
    n: usize,
    out: *mut *mut KntDataset,
) -> KntStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let m = row_major(data, n, n)?;
        let ds = Dataset::from_gram(m).map_err(fail)?;
        *out = Box::into_raw(Box::new(KntDataset(ds)));
        Ok(())
    })
}

/// # Safety
/// `dataset` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn knt_dataset_free(dataset: *mut KntDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

fn outer_kernel(kind: KntKernel, sigma: f64, data: &Dataset) -> Result<OuterKernel, KntStatus> {
    Ok(match kind {
        KntKernel::Exponential => OuterKernel::Exponential,
        KntKernel::Gaussian if sigma > 0.0 => OuterKernel::Gaussian { sigma },
        KntKernel::Gaussian => OuterKernel::Gaussian {
            sigma: median_heuristic(&data.gram()).map_err(fail)?,
        },
    })
}

unsafe fn known_params(cfg: &KntTestConfig, data: &Dataset, with_cov: bool) -> Result<KnownParams, KntStatus> {
    let k = cfg.known_dim;
    if cfg.known_mean.is_null() {
        return Err(null("known_mean"));
    }
    let mean = DVector::from_column_slice(std::slice::from_raw_parts(cfg.known_mean, k));
    let cov = if with_cov {
        if cfg.known_cov.is_null() {
            return Err(null("known_cov"));
        }
        Some(row_major(cfg.known_cov, k, k)?)
    } else {
        None
    };
    Ok(match data.mode() {
        DataMode::Vectors => KnownParams::explicit(mean, cov),
        DataMode::Gram => KnownParams::sample(mean, cov),
    })
}

/// Run the test on `dataset`.
///
/// # Safety
/// `dataset` must be a live handle, `config` a valid pointer (its `known_*`
/// pointers as documented on [`KntTestConfig`]) and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn knt_run_test(
    dataset: *const KntDataset,
    config: *const KntTestConfig,
    out: *mut *mut KntReport,
) -> KntStatus {
    guard(|| {
        if dataset.is_null() {
            return Err(null("dataset"));
        }
        if config.is_null() {
            return Err(null("config"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let data = &(*dataset).0;
        let cfg = &*config;
        let model = match cfg.model {
            KntModel::Full => NullModel::Full,
            KntModel::Rank => NullModel::Rank(cfg.rank),
            KntModel::Known => NullModel::Known(known_params(cfg, data, true)?),
            KntModel::KnownMean => NullModel::KnownMean(known_params(cfg, data, false)?),
        };
        let config = TestConfig {
            kernel: outer_kernel(cfg.kernel, cfg.sigma, data)?,
            model,
            alpha: cfg.alpha,
            b: cfg.replications,
            seed: cfg.seed,
            bootstrap: match cfg.bootstrap {
                KntBootstrap::Fast => Bootstrap::Fast,
                KntBootstrap::Slow => Bootstrap::Slow,
                KntBootstrap::Both => Bootstrap::Both,
            },
            fd_step: cfg.fd_step,
            linearization: Linearization::Auto,
        };
        let report = run_test(data, &config).map_err(fail)?;
        *out = Box::into_raw(Box::new(KntReport(report)));
        Ok(())
    })
}

/// # Safety
/// `report` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn knt_report_statistic(report: *const KntReport) -> f64 {
    report.as_ref().map_or(f64::NAN, |r| r.0.statistic)
}

/// # Safety
/// `report` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn knt_report_quantile(report: *const KntReport) -> f64 {
    report.as_ref().map_or(f64::NAN, |r| r.0.quantile)
}

/// # Safety
/// `report` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn knt_report_p_value(report: *const KntReport) -> f64 {
    report.as_ref().map_or(f64::NAN, |r| r.0.p_value)
}

/// # Safety
/// `report` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn knt_report_reject(report: *const KntReport) -> bool {
    report.as_ref().is_some_and(|r| r.0.reject)
}

/// Borrow the decision replications; valid until the report is freed.
///
/// # Safety
/// `report` must be a live handle and `len` writable.
#[no_mangle]
pub unsafe extern "C" fn knt_report_replications(report: *const KntReport, len: *mut usize) -> *const f64 {
    let Some(r) = report.as_ref() else {
        return ptr::null();
    };
    let reps = r.0.replications.as_deref().unwrap_or(&[]);
    if !len.is_null() {
        *len = reps.len();
    }
    reps.as_ptr()
}

/// Report as JSON; release with [`knt_string_free`]. Null on failure.
///
/// # Safety
/// `report` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn knt_report_to_json(report: *const KntReport) -> *mut c_char {
    let Some(r) = report.as_ref() else {
        set_error("report is null".into());
        return ptr::null_mut();
    };
    match to_json(&r.0) {
        Ok(s) => CString::new(s).map_or(ptr::null_mut(), CString::into_raw),
        Err(e) => {
            set_error(e.to_string());
            ptr::null_mut()
        }
    }
}

/// # Safety
/// `s` must be null or a string returned by this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn knt_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `report` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn knt_report_free(report: *mut KntReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Sequential rank selection. `alpha <= 0` uses the decreasing schedule.
///
/// # Safety
/// `dataset` must be a live handle and `r_hat` writable.
#[no_mangle]
pub unsafe extern "C" fn knt_select_rank(
    dataset: *const KntDataset,
    kernel: KntKernel,
    sigma: f64,
    r_max: usize,
    alpha: f64,
    replications: usize,
    seed: u64,
    r_hat: *mut usize,
) -> KntStatus {
    guard(|| {
        if dataset.is_null() {
            return Err(null("dataset"));
        }
        if r_hat.is_null() {
            return Err(null("r_hat"));
        }
        let data = &(*dataset).0;
        let mut config = RankSelectConfig::new(outer_kernel(kernel, sigma, data)?, r_max);
        if alpha > 0.0 {
            config.alpha_mode = AlphaMode::Fixed { alpha };
        }
        config.b = replications;
        config.seed = seed;
        let report = select_rank(data, &config).map_err(fail)?;
        *r_hat = report.r_hat;
        Ok(())
    })
}

/// `exp(-0.125 n^0.45)`.
#[no_mangle]
pub extern "C" fn knt_alpha_schedule(n: usize) -> f64 {
    alpha_schedule(n)
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn knt_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}
