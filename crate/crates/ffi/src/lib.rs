//! C ABI over the nanofcs toolkit.
//!
//! Streams and correlation curves are exposed as opaque handles; fit and
//! solver results cross the boundary as JSON strings. Every function returns
//! an [`NfcsStatus`]; on failure [`nfcs_last_error`] describes the error for
//! the calling thread. Strings returned through out-pointers are owned by the
//! caller and released with [`nfcs_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use nanofcs::correlator::{correlate, correlate_stream, CorrelationCurve, MultiTauScheme};
use nanofcs::fit::{fit_fcs, fit_lifetime, fit_power_series, DecayHistogram, FcsFixed, PowerFitOptions, PowerSeriesData};
use nanofcs::io;
use nanofcs::pipeline::{self, PipelineConfig};
use nanofcs::sim::{simulate, PhotonStream, SimConfig};
use nanofcs::solver::SolvedColumn;
use nanofcs::{Error, MeasuredInputs};

/// Status codes; the nonzero library codes equal the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NfcsStatus {
    Ok = 0,
    /// Malformed or schema-violating input.
    Schema = 2,
    /// Domain, configuration or data error.
    Invalid = 3,
    /// Fit did not converge or is rank deficient.
    Fit = 4,
    Io = 5,
    NullPointer = 10,
    InvalidUtf8 = 11,
    Panic = 12,
}

/// Photon stream.
pub struct NfcsStream(PhotonStream);

/// Correlation curve.
pub struct NfcsCurve(CorrelationCurve);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

enum Failure {
    Lib(Error),
    Null(&'static str),
    Utf8(&'static str),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn status_of(f: Failure) -> NfcsStatus {
    match f {
        Failure::Lib(e) => {
            let code = e.exit_code();
            set_error(e.to_string());
            match code {
                2 => NfcsStatus::Schema,
                3 => NfcsStatus::Invalid,
                4 => NfcsStatus::Fit,
                _ => NfcsStatus::Io,
            }
        }
        Failure::Null(name) => {
            set_error(format!("`{name}` is null"));
            NfcsStatus::NullPointer
        }
        Failure::Utf8(name) => {
            set_error(format!("`{name}` is not valid UTF-8"));
            NfcsStatus::InvalidUtf8
        }
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> NfcsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            NfcsStatus::Ok
        }
        Ok(Err(f)) => status_of(f),
        Err(_) => {
            set_error("internal panic".into());
            NfcsStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(name));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure::Utf8(name))
}

unsafe fn opt_str_arg<'a>(p: *const c_char, name: &'static str) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, name).map(Some)
    }
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(name))
}

unsafe fn put<T>(out: *mut *mut T, value: T, name: &'static str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null(name));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null("out"));
    }
    *out = CString::new(s).expect("no interior nul").into_raw();
    Ok(())
}

/// Message of the last failed call on this thread, or null after a
/// success. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn nfcs_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn nfcs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn nfcs_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Simulates a stream from a SimConfig JSON document.
///
/// # Safety
/// `config_json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nfcs_simulate(config_json: *const c_char, out: *mut *mut NfcsStream) -> NfcsStatus {
    guard(|| {
        let cfg: SimConfig = io::parse_json(str_arg(config_json, "config_json")?)?;
        cfg.validate()?;
        put(out, NfcsStream(simulate(&cfg)?), "out")
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nfcs_stream_read(path: *const c_char, out: *mut *mut NfcsStream) -> NfcsStatus {
    guard(|| {
        let s = io::read_stream(Path::new(str_arg(path, "path")?))?;
        put(out, NfcsStream(s), "out")
    })
}

/// Writes the stream and its metadata sidecar.
///
/// # Safety
/// `stream` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn nfcs_stream_write(stream: *const NfcsStream, path: *const c_char) -> NfcsStatus {
    guard(|| {
        let s = ref_arg(stream, "stream")?;
        Ok(io::write_stream(Path::new(str_arg(path, "path")?), &s.0)?)
    })
}

/// Number of photons, or 0 for a null handle.
///
/// # Safety
/// `stream` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nfcs_stream_len(stream: *const NfcsStream) -> usize {
    stream.as_ref().map_or(0, |s| s.0.len())
}

/// Acquisition length in seconds, or 0 for a null handle.
///
/// # Safety
/// `stream` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nfcs_stream_duration(stream: *const NfcsStream) -> f64 {
    stream.as_ref().map_or(0.0, |s| s.0.duration_seconds())
}

/// # Safety
/// `stream` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nfcs_stream_free(stream: *mut NfcsStream) {
    if !stream.is_null() {
        drop(Box::from_raw(stream));
    }
}

/// Correlates `a` with `b`, or `a` with itself (cross-correlating split
/// channels) when `b` is null. `scheme_json` may be null for the default
/// multi-tau scheme.
///
/// # Safety
/// Handles must be live or null as stated; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn nfcs_correlate(
    a: *const NfcsStream,
    b: *const NfcsStream,
    scheme_json: *const c_char,
    out: *mut *mut NfcsCurve,
) -> NfcsStatus {
    guard(|| {
        let a = ref_arg(a, "a")?;
        let scheme: MultiTauScheme = match opt_str_arg(scheme_json, "scheme_json")? {
            Some(s) => io::parse_json(s)?,
            None => MultiTauScheme::default(),
        };
        let curve = match b.as_ref() {
            Some(b) => correlate(&a.0, &b.0, &scheme)?,
            None => correlate_stream(&a.0, &scheme)?,
        };
        put(out, NfcsCurve(curve), "out")
    })
}

/// # Safety
/// `csv` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nfcs_curve_from_csv(csv: *const c_char, out: *mut *mut NfcsCurve) -> NfcsStatus {
    guard(|| {
        let c = CorrelationCurve::from_csv(str_arg(csv, "csv")?)?;
        put(out, NfcsCurve(c), "out")
    })
}

/// Number of lags, or 0 for a null handle.
///
/// # Safety
/// `curve` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nfcs_curve_len(curve: *const NfcsCurve) -> usize {
    curve.as_ref().map_or(0, |c| c.0.len())
}

/// Copies up to `cap` points into each non-null buffer; returns the number
/// copied.
///
/// # Safety
/// Each non-null buffer must hold `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn nfcs_curve_copy(
    curve: *const NfcsCurve,
    lags: *mut f64,
    g2: *mut f64,
    stderr: *mut f64,
    cap: usize,
) -> usize {
    let Some(c) = curve.as_ref() else { return 0 };
    let n = c.0.len().min(cap);
    for (dst, src) in [(lags, &c.0.lags), (g2, &c.0.g2), (stderr, &c.0.stderr)] {
        if !dst.is_null() {
            ptr::copy_nonoverlapping(src.as_ptr(), dst, n);
        }
    }
    n
}

/// # Safety
/// `curve` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nfcs_curve_to_csv(curve: *const NfcsCurve, out: *mut *mut c_char) -> NfcsStatus {
    guard(|| put_string(out, ref_arg(curve, "curve")?.0.to_csv()))
}

/// # Safety
/// `curve` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nfcs_curve_free(curve: *mut NfcsCurve) {
    if !curve.is_null() {
        drop(Box::from_raw(curve));
    }
}

/// Fits the FCS model; `fixed_json` (FcsFixed, may be null) holds fixed
/// parameters. Writes the fit as JSON.
///
/// # Safety
/// `curve` must be a live handle; strings NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nfcs_fit_fcs(curve: *const NfcsCurve, fixed_json: *const c_char, out: *mut *mut c_char) -> NfcsStatus {
    guard(|| {
        let c = ref_arg(curve, "curve")?;
        let fixed: FcsFixed = match opt_str_arg(fixed_json, "fixed_json")? {
            Some(s) => io::parse_json(s)?,
            None => FcsFixed::default(),
        };
        put_string(out, io::to_json_pretty(&fit_fcs(&c.0, None, fixed)?))
    })
}

/// Fits a power series given as CSV; `options_json` may be null.
///
/// # Safety
/// Strings must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nfcs_fit_power_series(csv: *const c_char, options_json: *const c_char, out: *mut *mut c_char) -> NfcsStatus {
    guard(|| {
        let data = PowerSeriesData::from_csv(str_arg(csv, "csv")?)?;
        let opts: PowerFitOptions = match opt_str_arg(options_json, "options_json")? {
            Some(s) => io::parse_json(s)?,
            None => PowerFitOptions::default(),
        };
        put_string(out, io::to_json_pretty(&fit_power_series(&data, opts)?))
    })
}

/// Fits a decay histogram given as CSV with IRF time constant `tau0_ns`.
///
/// # Safety
/// `csv` must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nfcs_fit_lifetime(csv: *const c_char, tau0_ns: f64, out: *mut *mut c_char) -> NfcsStatus {
    guard(|| {
        let h = DecayHistogram::from_csv(str_arg(csv, "csv")?, tau0_ns)?;
        put_string(out, io::to_json_pretty(&fit_lifetime(&h)?))
    })
}

/// Inverts MeasuredInputs JSON into a solved column (JSON).
///
/// # Safety
/// `inputs_json` must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nfcs_solve_rates(inputs_json: *const c_char, out: *mut *mut c_char) -> NfcsStatus {
    guard(|| {
        let inputs: MeasuredInputs = io::parse_json(str_arg(inputs_json, "inputs_json")?)?;
        put_string(out, io::to_json_pretty(&SolvedColumn::solve(inputs)?))
    })
}

/// Runs the pipeline, writing artifacts under `out_dir`; `report` receives
/// the Markdown report and may be null.
///
/// # Safety
/// Strings must be NUL-terminated; `report` null or writable.
#[no_mangle]
pub unsafe extern "C" fn nfcs_pipeline_run(config_json: *const c_char, out_dir: *const c_char, report: *mut *mut c_char) -> NfcsStatus {
    guard(|| {
        let cfg: PipelineConfig = io::parse_json(str_arg(config_json, "config_json")?)?;
        let result = pipeline::run(&cfg, Path::new(str_arg(out_dir, "out_dir")?))?;
        if report.is_null() {
            Ok(())
        } else {
            put_string(report, result.report_markdown())
        }
    })
}
