//! C interface to the codec-energy core.
//!
//! Every fallible function returns a [`CeStatus`]; on failure the message is
//! available from [`ce_last_error`] on the same thread. Output pointers are
//! written only on success.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, UnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use codec_energy::codec::{compute_bitrate, map_qp, CodecError};
use codec_energy::curve::{bd_quality, ebr, fit_re_line, CurveError, CurvePoint, QualityMetric};
use codec_energy::energy::{integrate_power, EnergyError};
use codec_energy::power::{counter_delta, CounterReading, DomainKind, PowerSample, PowerTrace, ProbeError};
use codec_energy::quality::{psnr_plane, Plane, DEFAULT_PSNR_CAP_DB};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    OutOfRange = 3,
    Io = 4,
    Parse = 5,
    Degenerate = 6,
    InsufficientData = 7,
    Panic = 99,
}

/// Least-squares line `energy = alpha * rate + beta`.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CeFit {
    pub alpha: f64,
    pub beta: f64,
    pub r_squared: f64,
    /// Non-zero when `r_squared` is below the requested floor.
    pub low_fit: u8,
}

/// Opaque power trace.
pub struct CeTrace {
    inner: PowerTrace,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Failure(CeStatus, String);

impl From<CodecError> for Failure {
    fn from(e: CodecError) -> Self {
        let status = match e {
            CodecError::OutOfRange { .. } => CeStatus::OutOfRange,
            _ => CeStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

impl From<CurveError> for Failure {
    fn from(e: CurveError) -> Self {
        let status = match e {
            CurveError::DegenerateRates | CurveError::NoOverlap => CeStatus::Degenerate,
            CurveError::TooFewPoints { .. } => CeStatus::InsufficientData,
            _ => CeStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

impl From<ProbeError> for Failure {
    fn from(e: ProbeError) -> Self {
        let status = match e {
            ProbeError::Io { .. } => CeStatus::Io,
            ProbeError::Replay { .. } | ProbeError::Malformed { .. } => CeStatus::Parse,
            ProbeError::InsufficientSamples(_) => CeStatus::InsufficientData,
            _ => CeStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

impl From<EnergyError> for Failure {
    fn from(e: EnergyError) -> Self {
        let status = match e {
            EnergyError::InsufficientSamples(_) => CeStatus::InsufficientData,
            _ => CeStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(CeStatus::InvalidArgument, msg.into())
}

/// Runs `f`, storing its result through `out` on success.
fn guard<T, F>(out: *mut T, f: F) -> CeStatus
where
    F: FnOnce() -> Result<T, Failure> + UnwindSafe,
{
    if out.is_null() {
        set_error("output pointer is null");
        return CeStatus::NullPointer;
    }
    match catch_unwind(f) {
        Ok(Ok(v)) => {
            unsafe { out.write(v) };
            CeStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            CeStatus::Panic
        }
    }
}

unsafe fn input<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure(CeStatus::NullPointer, format!("{what} is null")));
    }
    Ok(slice::from_raw_parts(p, n))
}

/// Message for the last failed call on this thread, or NULL. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ce_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ce_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Maps a QP on the 0-51 scale onto 0-63.
#[no_mangle]
pub extern "C" fn ce_map_qp(qp51: i64, out: *mut u32) -> CeStatus {
    guard(out, || Ok(map_qp(qp51)?))
}

/// Bitrate in kbit/s of `bytes` spread over `frames` at `fps`.
#[no_mangle]
pub extern "C" fn ce_compute_bitrate(bytes: u64, frames: u64, fps: u32, out_kbps: *mut f64) -> CeStatus {
    guard(out_kbps, || Ok(compute_bitrate(bytes, frames, fps)?))
}

/// Counter increment between two raw readings, allowing one wraparound.
#[no_mangle]
pub extern "C" fn ce_counter_delta(prev_uj: u64, next_uj: u64, max_range_uj: u64, out_uj: *mut u64) -> CeStatus {
    guard(out_uj, || {
        if prev_uj > max_range_uj || next_uj > max_range_uj {
            return Err(Failure(CeStatus::OutOfRange, "reading exceeds max_range_uj".into()));
        }
        let r = |energy_uj| CounterReading {
            energy_uj,
            max_range_uj,
            domain: DomainKind::Package,
            t_us: 0,
        };
        Ok(counter_delta(&r(prev_uj), &r(next_uj))?)
    })
}

/// PSNR in dB of one plane, capped at 100 dB.
#[no_mangle]
pub unsafe extern "C" fn ce_psnr_plane(
    reference: *const u16,
    distorted: *const u16,
    width: usize,
    height: usize,
    bit_depth: u8,
    out_db: *mut f64,
) -> CeStatus {
    guard(out_db, || {
        if width == 0 || height == 0 {
            return Err(invalid("empty plane"));
        }
        if !(8..=16).contains(&bit_depth) {
            return Err(Failure(CeStatus::OutOfRange, format!("bit depth {bit_depth}")));
        }
        let n = width.checked_mul(height).ok_or_else(|| invalid("plane too large"))?;
        let a = input(reference, n, "reference")?;
        let b = input(distorted, n, "distorted")?;
        let (a, b) = (Plane::new(width, height, a.to_vec()), Plane::new(width, height, b.to_vec()));
        psnr_plane(&a, &b, bit_depth, DEFAULT_PSNR_CAP_DB).map_err(|e| invalid(e.to_string()))
    })
}

/// Fits energy against rate; `low_fit` is set when r² is below `r2_floor`.
#[no_mangle]
pub unsafe extern "C" fn ce_fit_re_line(
    rates_kbps: *const f64,
    energies_j: *const f64,
    n: usize,
    r2_floor: f64,
    out: *mut CeFit,
) -> CeStatus {
    guard(out, || {
        let r = input(rates_kbps, n, "rates")?;
        let e = input(energies_j, n, "energies")?;
        let pts: Vec<CurvePoint> = r.iter().zip(e).map(|(&r, &e)| CurvePoint::re(r, e)).collect();
        let fit = fit_re_line(&pts)?;
        Ok(CeFit {
            alpha: fit.alpha,
            beta: fit.beta,
            r_squared: fit.r_squared,
            low_fit: ebr(&fit, r2_floor).low_fit as u8,
        })
    })
}

/// Average quality gain of the test curve over the anchor on their shared
/// log-rate interval.
#[no_mangle]
pub unsafe extern "C" fn ce_bd_quality(
    anchor_rates: *const f64,
    anchor_quality: *const f64,
    anchor_n: usize,
    test_rates: *const f64,
    test_quality: *const f64,
    test_n: usize,
    out: *mut f64,
) -> CeStatus {
    guard(out, || {
        let curve = |r: &[f64], q: &[f64]| -> Vec<CurvePoint> {
            r.iter().zip(q).map(|(&r, &q)| CurvePoint::rq(r, q)).collect()
        };
        let anchor = curve(
            input(anchor_rates, anchor_n, "anchor rates")?,
            input(anchor_quality, anchor_n, "anchor quality")?,
        );
        let test = curve(
            input(test_rates, test_n, "test rates")?,
            input(test_quality, test_n, "test quality")?,
        );
        Ok(bd_quality(QualityMetric::Psnr, "anchor", &anchor, "test", &test)?.bd_quality)
    })
}

/// Loads a `t_ms,pkg_w,dram_w` CSV trace.
#[no_mangle]
pub unsafe extern "C" fn ce_trace_from_csv(path: *const c_char, interval_ms: f64, out: *mut *mut CeTrace) -> CeStatus {
    guard(out, || {
        if path.is_null() {
            return Err(Failure(CeStatus::NullPointer, "path is null".into()));
        }
        let path = CStr::from_ptr(path).to_str().map_err(|_| invalid("path is not UTF-8"))?;
        let inner = PowerTrace::from_csv_path(Path::new(path), interval_ms)?;
        Ok(Box::into_raw(Box::new(CeTrace { inner })))
    })
}

/// Builds a trace from sample arrays. `dram_w` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn ce_trace_from_samples(
    t_ms: *const f64,
    pkg_w: *const f64,
    dram_w: *const f64,
    n: usize,
    interval_ms: f64,
    out: *mut *mut CeTrace,
) -> CeStatus {
    guard(out, || {
        let t = input(t_ms, n, "t_ms")?;
        let p = input(pkg_w, n, "pkg_w")?;
        let d = if dram_w.is_null() { None } else { Some(input(dram_w, n, "dram_w")?) };
        let samples = (0..n)
            .map(|i| PowerSample::new(t[i], p[i], d.map_or(0.0, |d| d[i])))
            .collect();
        let inner = PowerTrace::new(samples, interval_ms)?;
        Ok(Box::into_raw(Box::new(CeTrace { inner })))
    })
}

/// Number of samples, or 0 for NULL.
#[no_mangle]
pub unsafe extern "C" fn ce_trace_len(trace: *const CeTrace) -> usize {
    trace.as_ref().map_or(0, |t| t.inner.len())
}

/// Trapezoidal energy of the trace in joules.
#[no_mangle]
pub unsafe extern "C" fn ce_trace_energy(trace: *const CeTrace, out_j: *mut f64) -> CeStatus {
    let Some(t) = trace.as_ref() else {
        set_error("trace is null");
        return CeStatus::NullPointer;
    };
    let inner = &t.inner;
    guard(out_j, || Ok(integrate_power(inner)?))
}

/// Energy of the trace minus `idle_w` over its duration.
#[no_mangle]
pub unsafe extern "C" fn ce_trace_net_energy(trace: *const CeTrace, idle_w: f64, out_j: *mut f64) -> CeStatus {
    let Some(t) = trace.as_ref() else {
        set_error("trace is null");
        return CeStatus::NullPointer;
    };
    let inner = &t.inner;
    guard(out_j, || {
        if !(idle_w.is_finite() && idle_w >= 0.0) {
            return Err(invalid(format!("idle power {idle_w}")));
        }
        Ok(integrate_power(inner)? - idle_w * inner.duration_s())
    })
}

/// Releases a trace. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn ce_trace_free(trace: *mut CeTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}
