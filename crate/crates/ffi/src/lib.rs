//! C interface to `bpl-core`.
//!
//! Objects cross the boundary as opaque handles created by `*_new`,
//! `*_load` or `*_run` and released with the matching `*_free`. Every
//! fallible call returns a [`BplStatus`]; on failure the message is kept
//! per thread and can be read with `bpl_last_error_message`. Lengths
//! are in meters.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use bpl_core::analysis::{concurrence, EntanglementReport};
use bpl_core::config::{load_config, parse_config, ConfigError, ExperimentConfig};
use bpl_core::detection::{image_plane_joint, Plane};
use bpl_core::pipeline::{exit, run_pipeline, PipelineError};
use bpl_core::state::{build_state, BiphotonPathState};
use num_complex::Complex64;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BplStatus {
    Ok = 0,
    /// A required pointer was null.
    NullPointer = 1,
    /// An index, length or numeric argument is out of range.
    InvalidArgument = 2,
    /// The configuration could not be read or is invalid.
    Config = 3,
    /// Scan data or the analysis failed.
    Data = 4,
    /// Too many bootstrap resamples failed.
    Convergence = 5,
    /// File system error.
    Io = 6,
    /// Internal error.
    Panic = 7,
}

/// Detection plane selector for bpl_model_rate.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BplPlane {
    Image = 0,
    Fourier = 1,
}

pub struct BplConfig(ExperimentConfig);

pub struct BplState(BiphotonPathState);

pub struct BplReport(EntanglementReport);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(BplStatus, String);

type Outcome = Result<(), Failure>;

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let status = match e.exit_code() {
            exit::IO => BplStatus::Io,
            exit::CONFIG => BplStatus::Config,
            exit::CONVERGENCE => BplStatus::Convergence,
            _ => BplStatus::Data,
        };
        Failure(status, e.to_string())
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure(BplStatus::Config, e.to_string())
    }
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure(BplStatus::InvalidArgument, message.into())
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Outcome) -> BplStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            BplStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            BplStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure(BplStatus::NullPointer, format!("{what} is null")))
}

unsafe fn write<T>(out: *mut T, value: T, what: &str) -> Outcome {
    if out.is_null() {
        return Err(Failure(BplStatus::NullPointer, format!("{what} is null")));
    }
    out.write(value);
    Ok(())
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(BplStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn slice<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure(BplStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

/// Copies the last error of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length without the
/// terminator, or 0 when the last call succeeded.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn bpl_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Reads and validates a configuration file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bpl_config_load(path: *const c_char, out: *mut *mut BplConfig) -> BplStatus {
    guard(|| {
        let path = c_str(path, "path")?;
        let cfg = load_config(Path::new(path))?;
        write(out, Box::into_raw(Box::new(BplConfig(cfg))), "out")
    })
}

/// Parses configuration text.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bpl_config_parse(text: *const c_char, out: *mut *mut BplConfig) -> BplStatus {
    guard(|| {
        let text = c_str(text, "text")?;
        let cfg = parse_config(text, Path::new("<string>"))?;
        write(out, Box::into_raw(Box::new(BplConfig(cfg))), "out")
    })
}

/// # Safety
/// `cfg` must be null or a handle from `bpl_config_load`/`bpl_config_parse`
/// that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn bpl_config_free(cfg: *mut BplConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Number of paths; 0 for a null handle.
///
/// # Safety
/// `cfg` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bpl_config_dimension(cfg: *const BplConfig) -> usize {
    cfg.as_ref().map_or(0, |c| c.0.source.dimension)
}

/// Normalized pump path amplitudes. `re` and `im` must hold
/// `bpl_config_dimension(cfg)` values.
///
/// # Safety
/// `cfg` must be a live handle; `re` and `im` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn bpl_config_pump_amplitudes(
    cfg: *const BplConfig,
    re: *mut f64,
    im: *mut f64,
    len: usize,
) -> BplStatus {
    guard(|| {
        let amps = borrow(cfg, "cfg")?.0.pump_amplitudes()?;
        if len < amps.len() {
            return Err(invalid(format!("buffers hold {len} values, need {}", amps.len())));
        }
        if re.is_null() || im.is_null() {
            return Err(Failure(BplStatus::NullPointer, "re/im is null".into()));
        }
        for (k, a) in amps.iter().enumerate() {
            *re.add(k) = a.re;
            *im.add(k) = a.im;
        }
        Ok(())
    })
}

/// Biphoton path state produced by the configured source.
///
/// # Safety
/// `cfg` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bpl_config_state(cfg: *const BplConfig, out: *mut *mut BplState) -> BplStatus {
    guard(|| {
        let state = borrow(cfg, "cfg")?.0.state()?;
        write(out, Box::into_raw(Box::new(BplState(state))), "out")
    })
}

/// Biphoton path state from `n` complex amplitudes (normalized here),
/// the focused waist and the path pitch.
///
/// # Safety
/// `re` and `im` must point to `n` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bpl_state_new(
    re: *const f64,
    im: *const f64,
    n: usize,
    waist: f64,
    pitch: f64,
    out: *mut *mut BplState,
) -> BplStatus {
    guard(|| {
        let (re, im) = (slice(re, n, "re")?, slice(im, n, "im")?);
        let mut amps: Vec<Complex64> = re.iter().zip(im).map(|(&r, &i)| Complex64::new(r, i)).collect();
        let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(invalid("amplitudes must be finite and not all zero"));
        }
        amps.iter_mut().for_each(|a| *a /= norm);
        let state = build_state(&amps, waist, pitch).map_err(|e| invalid(e.to_string()))?;
        write(out, Box::into_raw(Box::new(BplState(state))), "out")
    })
}

/// # Safety
/// `state` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bpl_state_free(state: *mut BplState) {
    if !state.is_null() {
        drop(Box::from_raw(state));
    }
}

/// # Safety
/// `state` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bpl_state_dimension(state: *const BplState) -> usize {
    state.as_ref().map_or(0, |s| s.0.dimension())
}

/// Overlap of the Gaussian modes of paths `i` and `j`.
///
/// # Safety
/// `state` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bpl_state_overlap(state: *const BplState, i: usize, j: usize, out: *mut f64) -> BplStatus {
    guard(|| {
        let s = &borrow(state, "state")?.0;
        let d = s.dimension();
        if i >= d || j >= d {
            return Err(invalid(format!("path index ({i}, {j}) out of range for D = {d}")));
        }
        write(out, s.overlap()[(i, j)], "out")
    })
}

/// Image-plane joint coincidence density at detector positions `x1`, `x2`
/// for a Gaussian position correlation of width `sigma`.
///
/// # Safety
/// `state` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bpl_image_joint_density(
    state: *const BplState,
    sigma: f64,
    x1: f64,
    x2: f64,
    out: *mut f64,
) -> BplStatus {
    guard(|| {
        let s = &borrow(state, "state")?.0;
        if !(sigma >= 0.0) || !x1.is_finite() || !x2.is_finite() {
            return Err(invalid("sigma must be >= 0 and positions finite"));
        }
        write(out, image_plane_joint(x1, x2, s, sigma), "out")
    })
}

/// Slit-integrated coincidence rate of the configured detection model,
/// with detector 1 at `x_fixed` and detector 2 at `x_scan`.
/// `plane` is a `BplPlane` value.
///
/// # Safety
/// `cfg` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bpl_model_rate(
    cfg: *const BplConfig,
    plane: u32,
    x_fixed: f64,
    x_scan: f64,
    out: *mut f64,
) -> BplStatus {
    guard(|| {
        let cfg = &borrow(cfg, "cfg")?.0;
        let plane = match plane {
            p if p == BplPlane::Image as u32 => Plane::Image,
            p if p == BplPlane::Fourier as u32 => Plane::Fourier,
            p => return Err(invalid(format!("unknown plane {p}"))),
        };
        write(out, cfg.model(plane)?.rate(x_fixed, x_scan), "out")
    })
}

/// Concurrence of a pure state with `n` (1 to 3) Schmidt coefficients.
///
/// # Safety
/// `kappa` must point to `n` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bpl_concurrence(kappa: *const f64, n: usize, out: *mut f64) -> BplStatus {
    guard(|| {
        let k = slice(kappa, n, "kappa")?;
        if k.is_empty() || k.iter().any(|v| !(*v >= 0.0)) {
            return Err(invalid("kappa must be non-empty and non-negative"));
        }
        let c = concurrence(k).map_err(|e| invalid(e.to_string()))?;
        write(out, c, "out")
    })
}

/// Simulates image and Fourier scans, fits them and reports the
/// entanglement estimate with bootstrap uncertainties.
///
/// # Safety
/// `cfg` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bpl_pipeline_run(cfg: *const BplConfig, seed: u64, out: *mut *mut BplReport) -> BplStatus {
    guard(|| {
        let run = run_pipeline(&borrow(cfg, "cfg")?.0, seed)?;
        write(out, Box::into_raw(Box::new(BplReport(run.report))), "out")
    })
}

/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bpl_report_free(report: *mut BplReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bpl_report_dimension(report: *const BplReport) -> usize {
    report.as_ref().map_or(0, |r| r.0.dimension)
}

/// Concurrence and its bootstrap standard deviation. `std` may be null.
///
/// # Safety
/// `report` must be a live handle; `value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bpl_report_concurrence(report: *const BplReport, value: *mut f64, std: *mut f64) -> BplStatus {
    guard(|| {
        let r = &borrow(report, "report")?.0;
        if !std.is_null() {
            *std = r.concurrence_std;
        }
        write(value, r.concurrence, "value")
    })
}

/// Joint probability of paths (`i`, `j`) and its standard deviation.
/// `std` may be null.
///
/// # Safety
/// `report` must be a live handle; `value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bpl_report_probability(
    report: *const BplReport,
    i: usize,
    j: usize,
    value: *mut f64,
    std: *mut f64,
) -> BplStatus {
    guard(|| {
        let r = &borrow(report, "report")?.0;
        let d = r.dimension;
        if i >= d || j >= d {
            return Err(invalid(format!("path index ({i}, {j}) out of range for D = {d}")));
        }
        if !std.is_null() {
            *std = r.coeffs_std[(i, j)];
        }
        write(value, r.coeffs.get(i, j), "value")
    })
}

/// Schmidt coefficient `k` and its standard deviation. `std` may be null.
///
/// # Safety
/// `report` must be a live handle; `value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bpl_report_schmidt(report: *const BplReport, k: usize, value: *mut f64, std: *mut f64) -> BplStatus {
    guard(|| {
        let r = &borrow(report, "report")?.0;
        let Some(&kappa) = r.kappa.get(k) else {
            return Err(invalid(format!("index {k} out of range for D = {}", r.dimension)));
        };
        if !std.is_null() {
            *std = r.kappa_std[k];
        }
        write(value, kappa, "value")
    })
}
