//! C interface to `sensync`.
//!
//! Every function returns a [`SensyncStatus`]. On failure the message is
//! kept per thread and read back with [`sensync_last_error_message`].
//! Objects crossing the boundary are opaque handles released with their
//! matching `_free` function; strings returned by the library are released
//! with [`sensync_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use sensync::config::Config;
use sensync::features::{audio_energy, AudioClip};
use sensync::flow::{estimate_dense_flow, reduce_flow, FlowParams, Frame};
use sensync::stream::{SensorKind, TimeSeries, UniformSeries};
use sensync::sync::{self, CalibrationTable, EstimationConfig};
use sensync::xcorr::{self, CorrelationFunction, DelayEstimate};
use sensync::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SensyncStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// Malformed series or frames: too short, non-monotonic, non-finite,
    /// mismatched lengths or dimensions.
    InvalidInput = 3,
    ConstantSeries = 4,
    InsufficientOverlap = 5,
    DegenerateFrame = 6,
    UnsupportedAudio = 7,
    MissingCalibrationEntry = 8,
    InvalidConfig = 9,
    Io = 10,
    Format = 11,
    BufferTooSmall = 12,
    NotFound = 13,
    Panic = 14,
}

impl From<&Error> for SensyncStatus {
    fn from(e: &Error) -> Self {
        use SensyncStatus as S;
        match e {
            Error::ConstantSeries => S::ConstantSeries,
            Error::InsufficientOverlap { .. } | Error::PrefixTooShort { .. } => S::InsufficientOverlap,
            Error::DegenerateFrame | Error::NoValidPixels => S::DegenerateFrame,
            Error::EmptyClip | Error::NonPositiveBin(_) | Error::UnsupportedAudio(_) => S::UnsupportedAudio,
            Error::MissingCalibrationEntry(_) => S::MissingCalibrationEntry,
            Error::InvalidSpec(_) | Error::InvalidConfig(_) => S::InvalidConfig,
            Error::InvalidArgument(_) | Error::LagTooLarge { .. } => S::InvalidArgument,
            Error::Io { .. } => S::Io,
            Error::Format { .. } | Error::MissingColumn { .. } | Error::UnparsableRow { .. } => S::Format,
            _ => S::InvalidInput,
        }
    }
}

struct Failure {
    status: SensyncStatus,
    message: String,
}

impl Failure {
    fn new(status: SensyncStatus, message: impl Into<String>) -> Self {
        Failure {
            status,
            message: message.into(),
        }
    }

    fn null(name: &str) -> Self {
        Failure::new(SensyncStatus::NullPointer, format!("`{name}` is null"))
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::new((&e).into(), format!("{}: {e}", e.code()))
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: &str) {
    let text = CString::new(message.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(text));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SensyncStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SensyncStatus::Ok,
        Ok(Err(fail)) => {
            set_last_error(&fail.message);
            fail.status
        }
        Err(payload) => {
            let what = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("internal panic: {what}"));
            SensyncStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(data: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if data.is_null() {
        return Err(Failure::null(name));
    }
    Ok(std::slice::from_raw_parts(data, len))
}

unsafe fn out_ref<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure::null(name))
}

unsafe fn path_arg<'a>(p: *const c_char, name: &str) -> Result<&'a Path, Failure> {
    if p.is_null() {
        return Err(Failure::null(name));
    }
    let text = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(SensyncStatus::InvalidArgument, format!("`{name}` is not UTF-8")))?;
    Ok(Path::new(text))
}

fn kind_arg(index: u32) -> Result<SensorKind, Failure> {
    SensorKind::from_index(index).ok_or_else(|| {
        Failure::new(SensyncStatus::InvalidArgument, format!("unknown sensor kind {index}"))
    })
}

/// Message for the last failed call on this thread, or null after a
/// successful one. Valid until the next call into the library.
#[no_mangle]
pub extern "C" fn sensync_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Static, nul-terminated version string.
#[no_mangle]
pub extern "C" fn sensync_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Sensor kind indices: 0 AccelZ, 1 AudioEnergy, 2 FlowX_Front,
/// 3 FlowY_Front, 4 FlowY_Dash, 5 FlowY_Face, 6 SteeringAngle.
pub const SENSYNC_SENSOR_KIND_COUNT: u32 = 7;

/// Name of a sensor kind, or null for an unknown index.
#[no_mangle]
pub extern "C" fn sensync_sensor_kind_name(kind: u32) -> *const c_char {
    const NAMES: [&str; 7] = [
        "AccelZ\0",
        "AudioEnergy\0",
        "FlowX_Front\0",
        "FlowY_Front\0",
        "FlowY_Dash\0",
        "FlowY_Face\0",
        "SteeringAngle\0",
    ];
    NAMES.get(kind as usize).map_or(ptr::null(), |n| n.as_ptr().cast())
}

/// A timestamped sensor trace.
pub struct SensyncSeries(TimeSeries);

/// Copies `len` timestamps (ms, strictly increasing) and values into a new
/// series handle.
///
/// # Safety
/// `timestamps_ms` and `values` must point to `len` readable doubles and
/// `out` to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn sensync_series_new(
    kind: u32,
    timestamps_ms: *const f64,
    values: *const f64,
    len: usize,
    out: *mut *mut SensyncSeries,
) -> SensyncStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let ts = slice(timestamps_ms, len, "timestamps_ms")?.to_vec();
        let vs = slice(values, len, "values")?.to_vec();
        let series = TimeSeries::new(kind_arg(kind)?, ts, vs)?;
        *out = Box::into_raw(Box::new(SensyncSeries(series)));
        Ok(())
    })
}

/// # Safety
/// `series` must be null or a handle from [`sensync_series_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sensync_series_free(series: *mut SensyncSeries) {
    if !series.is_null() {
        drop(Box::from_raw(series));
    }
}

/// Sample count; 0 for a null handle.
///
/// # Safety
/// `series` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sensync_series_len(series: *const SensyncSeries) -> usize {
    series.as_ref().map_or(0, |s| s.0.len())
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensyncEstimationConfig {
    pub grid_rate_hz: f64,
    pub max_lag_s: f64,
    pub refine: bool,
    pub min_duration_s: f64,
}

impl From<SensyncEstimationConfig> for EstimationConfig {
    fn from(c: SensyncEstimationConfig) -> Self {
        EstimationConfig {
            grid_rate_hz: c.grid_rate_hz,
            max_lag_s: c.max_lag_s,
            refine: c.refine,
            min_duration_s: c.min_duration_s,
        }
    }
}

#[no_mangle]
pub extern "C" fn sensync_estimation_config_default() -> SensyncEstimationConfig {
    let d = EstimationConfig::default();
    SensyncEstimationConfig {
        grid_rate_hz: d.grid_rate_hz,
        max_lag_s: d.max_lag_s,
        refine: d.refine,
        min_duration_s: d.min_duration_s,
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensyncDelayEstimate {
    /// Positive when the target lags the reference.
    pub delta_star_ms: f64,
    pub peak_value: f64,
    pub integer_lag: i64,
    pub refined: bool,
    /// NaN when there is no competing peak.
    pub second_peak_ratio: f64,
    pub rate_hz: f64,
}

impl From<DelayEstimate> for SensyncDelayEstimate {
    fn from(e: DelayEstimate) -> Self {
        SensyncDelayEstimate {
            delta_star_ms: e.delta_star_ms,
            peak_value: e.peak_value,
            integer_lag: e.integer_lag,
            refined: e.refined,
            second_peak_ratio: e.second_peak_ratio.unwrap_or(f64::NAN),
            rate_hz: e.rate_hz,
        }
    }
}

/// Delay of `target` relative to `reference`. Sign conventions for
/// negatively correlated kinds are applied. A null `config` means defaults.
///
/// # Safety
/// Handles must be live; `config` null or readable; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sensync_estimate_pair_delay(
    reference: *const SensyncSeries,
    target: *const SensyncSeries,
    config: *const SensyncEstimationConfig,
    out: *mut SensyncDelayEstimate,
) -> SensyncStatus {
    guard(|| {
        let r = reference.as_ref().ok_or_else(|| Failure::null("reference"))?;
        let t = target.as_ref().ok_or_else(|| Failure::null("target"))?;
        let cfg = config
            .as_ref()
            .map_or_else(EstimationConfig::default, |c| (*c).into());
        let out = out_ref(out, "out")?;
        *out = sync::estimate_pair_delay(&r.0, &t.0, &cfg)?.into();
        Ok(())
    })
}

/// Cross-correlation of two uniformly sampled arrays at lags
/// `-max_lag ..= max_lag`, written to `out` (capacity `2 * max_lag + 1`).
///
/// # Safety
/// `f`, `g` must be readable for their lengths and `out` writable for
/// `out_capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn sensync_cross_correlate(
    f: *const f64,
    f_len: usize,
    g: *const f64,
    g_len: usize,
    max_lag: usize,
    out: *mut f64,
    out_capacity: usize,
) -> SensyncStatus {
    guard(|| {
        let needed = 2 * max_lag + 1;
        if out_capacity < needed {
            return Err(Failure::new(
                SensyncStatus::BufferTooSmall,
                format!("need {needed} slots, got {out_capacity}"),
            ));
        }
        let fs = UniformSeries::new(1000.0, 0.0, slice(f, f_len, "f")?.to_vec())?;
        let gs = UniformSeries::new(1000.0, 0.0, slice(g, g_len, "g")?.to_vec())?;
        let corr = xcorr::cross_correlate_fft(&fs, &gs, max_lag)?;
        if out.is_null() {
            return Err(Failure::null("out"));
        }
        std::slice::from_raw_parts_mut(out, needed).copy_from_slice(corr.values());
        Ok(())
    })
}

/// Best lag of a correlation array covering `-max_lag ..= max_lag`
/// (`len == 2 * max_lag + 1`) sampled at `rate_hz`.
///
/// # Safety
/// `values` readable for `len` doubles, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sensync_argmax_delay(
    values: *const f64,
    len: usize,
    rate_hz: f64,
    refine: bool,
    out: *mut SensyncDelayEstimate,
) -> SensyncStatus {
    guard(|| {
        if len % 2 == 0 {
            return Err(Failure::new(
                SensyncStatus::InvalidArgument,
                format!("length {len} is not 2 * max_lag + 1"),
            ));
        }
        let v = slice(values, len, "values")?.to_vec();
        let corr = CorrelationFunction::symmetric(len / 2, v, rate_hz)?;
        *out_ref(out, "out")? = xcorr::argmax_delay(&corr, refine)?.into();
        Ok(())
    })
}

/// Per-bin audio energy of 16-bit samples. Bins are `bin_ms` wide and a
/// trailing partial bin is dropped. The bin count goes to `out_len`; when
/// `out` is null or too small only the count is reported (with
/// `BUFFER_TOO_SMALL` for a short buffer).
///
/// # Safety
/// `samples` readable for `len` values, `out` null or writable for
/// `out_capacity` doubles, `out_len` writable.
#[no_mangle]
pub unsafe extern "C" fn sensync_audio_energy(
    samples: *const i16,
    len: usize,
    sample_rate_hz: u32,
    bin_ms: f64,
    out: *mut f64,
    out_capacity: usize,
    out_len: *mut usize,
) -> SensyncStatus {
    guard(|| {
        let count = out_ref(out_len, "out_len")?;
        let clip = AudioClip::from_i16(sample_rate_hz, slice(samples, len, "samples")?)?;
        let energy = audio_energy(&clip, bin_ms)?;
        *count = energy.len();
        if out.is_null() {
            return Ok(());
        }
        if out_capacity < energy.len() {
            return Err(Failure::new(
                SensyncStatus::BufferTooSmall,
                format!("need {} slots, got {out_capacity}", energy.len()),
            ));
        }
        std::slice::from_raw_parts_mut(out, energy.len()).copy_from_slice(energy.values());
        Ok(())
    })
}

/// Mean dense optical flow between two 8-bit grayscale frames, row-major,
/// with default flow parameters.
///
/// # Safety
/// Both frames readable for `width * height` bytes; outputs writable.
#[no_mangle]
pub unsafe extern "C" fn sensync_mean_flow(
    previous: *const u8,
    next: *const u8,
    width: usize,
    height: usize,
    out_dx: *mut f64,
    out_dy: *mut f64,
) -> SensyncStatus {
    guard(|| {
        let n = width
            .checked_mul(height)
            .ok_or_else(|| Failure::new(SensyncStatus::InvalidArgument, "frame size overflows"))?;
        let a = Frame::from_u8(width, height, slice(previous, n, "previous")?)?;
        let b = Frame::from_u8(width, height, slice(next, n, "next")?)?;
        let (dx, dy) = reduce_flow(&estimate_dense_flow(&a, &b, &FlowParams::default())?)?;
        *out_ref(out_dx, "out_dx")? = dx;
        *out_ref(out_dy, "out_dy")? = dy;
        Ok(())
    })
}

/// Normalizing delays loaded from a calibration JSON file.
pub struct SensyncCalibration(CalibrationTable);

/// # Safety
/// `path` must be a nul-terminated string, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sensync_calibration_load(
    path: *const c_char,
    out: *mut *mut SensyncCalibration,
) -> SensyncStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let table = CalibrationTable::load(path_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(SensyncCalibration(table)));
        Ok(())
    })
}

/// Normalizing delay and its error for a pair. `error_ms` receives NaN when
/// the table came from a single run. Returns `NOT_FOUND` for an unknown pair.
///
/// # Safety
/// `table` live; outputs writable (`error_ms` may be null).
#[no_mangle]
pub unsafe extern "C" fn sensync_calibration_lookup(
    table: *const SensyncCalibration,
    reference: u32,
    target: u32,
    delay_ms: *mut f64,
    error_ms: *mut f64,
) -> SensyncStatus {
    guard(|| {
        let table = table.as_ref().ok_or_else(|| Failure::null("table"))?;
        let (r, t) = (kind_arg(reference)?, kind_arg(target)?);
        let delay = out_ref(delay_ms, "delay_ms")?;
        let entry = table
            .0
            .lookup(r, t)
            .ok_or_else(|| Failure::new(SensyncStatus::NotFound, format!("no entry for {r}/{t}")))?;
        *delay = entry.normalizing_delay_ms;
        if let Some(e) = error_ms.as_mut() {
            *e = entry.error_ms.unwrap_or(f64::NAN);
        }
        Ok(())
    })
}

/// # Safety
/// `table` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sensync_calibration_free(table: *mut SensyncCalibration) {
    if !table.is_null() {
        drop(Box::from_raw(table));
    }
}

/// Runs synchronization for a TOML or JSON config file and returns the
/// report as JSON. No files are written. Free the string with
/// [`sensync_string_free`].
///
/// # Safety
/// `config_path` nul-terminated, `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn sensync_sync_report_json(
    config_path: *const c_char,
    out_json: *mut *mut c_char,
) -> SensyncStatus {
    guard(|| {
        let out = out_ref(out_json, "out_json")?;
        *out = ptr::null_mut();
        let config = Config::load(path_arg(config_path, "config_path")?)?;
        let (report, _) = sensync::cli::run_sync(&config)?;
        let text = CString::new(report.to_json()).expect("JSON has no nul bytes");
        *out = text.into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn sensync_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
