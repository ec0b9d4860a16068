//! C ABI surface.
//!
//! Conventions shared by every function here:
//!
//! - Fallible calls return [`RescastStatus`] and deliver results through
//!   out-pointers, which are written only on success. `Ok` is zero, so the
//!   usual `if (rescast_...(...)) goto fail;` idiom works.
//! - After a failure, [`rescast_last_error_message`] returns a description
//!   of what went wrong. The message is thread-local and stays valid until
//!   the next failing call on the same thread.
//! - [`RescastGrid`] and [`RescastDenoiser`] are opaque, caller-owned
//!   handles released with the matching `_free` function. Handles are not
//!   synchronized; use each one from a single thread at a time.
//! - Raster buffers are row-major with row 0 at the grid origin and
//!   missing pixels encoded as NaN.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::ptr;

use ndarray::{Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rescast::edm::{
    edm_coeffs, heun_sample, load_checkpoint, Denoiser, OracleDenoiser, ScheduleConfig,
    SigmaSchedule,
};
use rescast::grid::{
    format_valid_time, parse_valid_time, read_grid, write_grid, GridField, GridGeometry, VarTag,
};
use rescast::loss::WeightCurve;
use rescast::uq::make_scenarios;
use rescast::verify::{contingency, contingency_wet_only, fss, mae_nonzero, ContingencyCounts};
use rescast::Error;

/// Result code returned by every fallible call.
#[repr(i32)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RescastStatus {
    /// The call succeeded and all out-pointers were written.
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// An argument value was rejected before any work started.
    InvalidArgument = 2,
    /// Reading, writing, or combining data failed.
    DataError = 3,
    /// A computation produced or encountered a non-finite value.
    NumericError = 4,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 5,
}

/// Opaque handle to one raster field: geometry, variable tag, valid time,
/// and a row-major f32 payload with NaN marking missing pixels.
pub struct RescastGrid {
    inner: GridField,
}

/// Opaque handle to a denoiser accepted by `rescast_heun_sample`.
pub struct RescastDenoiser {
    inner: Box<dyn Denoiser>,
}

/// Grid placement and spacing. Row 0, column 0 sits at (lat0, lon0); rows
/// step north by dy_km and columns step east by dx_km.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RescastGeometry {
    pub ny: usize,
    pub nx: usize,
    pub lat0: f64,
    pub lon0: f64,
    pub dy_km: f64,
    pub dx_km: f64,
}

/// Preconditioner gains at one noise level.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RescastEdmCoeffs {
    pub c_skip: f64,
    pub c_out: f64,
    pub c_in: f64,
    pub c_noise: f64,
}

/// Pixel counts of a yes/no comparison at a fixed event threshold.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RescastContingency {
    pub hits: u64,
    pub false_alarms: u64,
    pub misses: u64,
    pub correct_negatives: u64,
}

/// Noise ladder for sampling: `steps` levels from sigma_max down to
/// sigma_min with warping exponent rho.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RescastSchedule {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub rho: f64,
    pub steps: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn fail(status: RescastStatus, msg: impl Into<Vec<u8>>) -> RescastStatus {
    let text = CString::new(msg).unwrap_or_else(|_| CString::new("error message held NUL").unwrap());
    LAST_ERROR.with(|slot| *slot.borrow_mut() = text);
    status
}

fn fail_core(e: Error) -> RescastStatus {
    let status = match e.exit_code() {
        2 => RescastStatus::InvalidArgument,
        4 => RescastStatus::NumericError,
        _ => RescastStatus::DataError,
    };
    fail(status, e.to_string())
}

macro_rules! nonnull {
    ($ptr:ident) => {
        match $ptr.as_ref() {
            Some(r) => r,
            None => return fail(RescastStatus::NullPointer, concat!(stringify!($ptr), " is null")),
        }
    };
}

macro_rules! nonnull_mut {
    ($ptr:ident) => {
        match $ptr.as_mut() {
            Some(r) => r,
            None => return fail(RescastStatus::NullPointer, concat!(stringify!($ptr), " is null")),
        }
    };
}

macro_rules! cstr {
    ($ptr:ident) => {{
        if $ptr.is_null() {
            return fail(RescastStatus::NullPointer, concat!(stringify!($ptr), " is null"));
        }
        match CStr::from_ptr($ptr).to_str() {
            Ok(s) => s,
            Err(_) => {
                return fail(
                    RescastStatus::InvalidUtf8,
                    concat!(stringify!($ptr), " is not valid UTF-8"),
                )
            }
        }
    }};
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rescast_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message describing the most recent failure on the calling thread, empty
/// before the first failure. The pointer stays valid until the next
/// failing call on the same thread.
#[no_mangle]
pub extern "C" fn rescast_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Read a grid file and hand back a new grid handle.
#[no_mangle]
pub unsafe extern "C" fn rescast_grid_read(
    path: *const c_char,
    out: *mut *mut RescastGrid,
) -> RescastStatus {
    let path = cstr!(path);
    let out = nonnull_mut!(out);
    match read_grid(path) {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(RescastGrid { inner }));
            RescastStatus::Ok
        }
        Err(e) => fail_core(e),
    }
}

/// Write a grid to a file, replacing any previous content.
#[no_mangle]
pub unsafe extern "C" fn rescast_grid_write(
    grid: *const RescastGrid,
    path: *const c_char,
) -> RescastStatus {
    let grid = nonnull!(grid);
    let path = cstr!(path);
    match write_grid(&grid.inner, path) {
        Ok(()) => RescastStatus::Ok,
        Err(e) => fail_core(e),
    }
}

/// Build a grid from scratch. `variable` names the stored quantity (for
/// example "rain" or "residual"), `valid_time` is an RFC 3339 UTC stamp
/// such as "2021-06-01T05:00:00Z", and `values` holds ny*nx row-major
/// samples; pass null to start with every pixel missing.
#[no_mangle]
pub unsafe extern "C" fn rescast_grid_new(
    geometry: *const RescastGeometry,
    variable: *const c_char,
    valid_time: *const c_char,
    values: *const f32,
    out: *mut *mut RescastGrid,
) -> RescastStatus {
    let g = nonnull!(geometry);
    let variable = cstr!(variable);
    let valid_time = cstr!(valid_time);
    let out = nonnull_mut!(out);
    let geom = match GridGeometry::new(g.ny, g.nx, g.lat0, g.lon0, g.dy_km, g.dx_km) {
        Ok(geom) => geom,
        Err(e) => return fail_core(e),
    };
    let stamp = match parse_valid_time(valid_time) {
        Ok(t) => t,
        Err(e) => return fail_core(e),
    };
    let var = VarTag::from_str(variable);
    let inner = if values.is_null() {
        Ok(GridField::filled(geom, var, stamp, f32::NAN))
    } else {
        let buf = std::slice::from_raw_parts(values, g.ny * g.nx).to_vec();
        GridField::new(geom, var, stamp, buf)
    };
    match inner {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(RescastGrid { inner }));
            RescastStatus::Ok
        }
        Err(e) => fail_core(e),
    }
}

/// Release a grid handle. Null is accepted and ignored.
#[no_mangle]
pub unsafe extern "C" fn rescast_grid_free(grid: *mut RescastGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// Copy the grid's placement and spacing into `out`.
#[no_mangle]
pub unsafe extern "C" fn rescast_grid_geometry(
    grid: *const RescastGrid,
    out: *mut RescastGeometry,
) -> RescastStatus {
    let grid = nonnull!(grid);
    let out = nonnull_mut!(out);
    let g = &grid.inner.geom;
    *out = RescastGeometry {
        ny: g.ny,
        nx: g.nx,
        lat0: g.lat0,
        lon0: g.lon0,
        dy_km: g.dy_km,
        dx_km: g.dx_km,
    };
    RescastStatus::Ok
}

/// Borrow the grid's row-major value buffer. The pointer is valid until
/// the handle is freed.
#[no_mangle]
pub unsafe extern "C" fn rescast_grid_values(
    grid: *const RescastGrid,
    out_ptr: *mut *const f32,
    out_len: *mut usize,
) -> RescastStatus {
    let grid = nonnull!(grid);
    let out_ptr = nonnull_mut!(out_ptr);
    let out_len = nonnull_mut!(out_len);
    *out_ptr = grid.inner.values().as_ptr();
    *out_len = grid.inner.values().len();
    RescastStatus::Ok
}

/// Fetch one pixel. Missing pixels read as NaN; coordinates outside the
/// grid are rejected.
#[no_mangle]
pub unsafe extern "C" fn rescast_grid_value_at(
    grid: *const RescastGrid,
    row: usize,
    col: usize,
    out: *mut f32,
) -> RescastStatus {
    let grid = nonnull!(grid);
    let out = nonnull_mut!(out);
    let f = &grid.inner;
    if row >= f.geom.ny || col >= f.geom.nx {
        return fail(
            RescastStatus::InvalidArgument,
            format!("pixel ({row}, {col}) outside {}x{} grid", f.geom.ny, f.geom.nx),
        );
    }
    *out = f.get(row, col);
    RescastStatus::Ok
}

/// Write the grid's valid time into `buf` as a NUL-terminated RFC 3339
/// stamp. `buf_len` must cover the stamp plus the terminator; 21 bytes is
/// always enough.
#[no_mangle]
pub unsafe extern "C" fn rescast_grid_valid_time(
    grid: *const RescastGrid,
    buf: *mut c_char,
    buf_len: usize,
) -> RescastStatus {
    let grid = nonnull!(grid);
    if buf.is_null() {
        return fail(RescastStatus::NullPointer, "buf is null");
    }
    let stamp = format_valid_time(&grid.inner.valid_time);
    if buf_len < stamp.len() + 1 {
        return fail(
            RescastStatus::InvalidArgument,
            format!("buffer of {buf_len} bytes cannot hold {} plus NUL", stamp.len()),
        );
    }
    ptr::copy_nonoverlapping(stamp.as_ptr() as *const c_char, buf, stamp.len());
    *buf.add(stamp.len()) = 0;
    RescastStatus::Ok
}

/// Mean absolute error over pixels where prediction and truth are both
/// present and at least one is nonzero.
#[no_mangle]
pub unsafe extern "C" fn rescast_mae_nonzero(
    pred: *const RescastGrid,
    truth: *const RescastGrid,
    out: *mut f64,
) -> RescastStatus {
    let pred = nonnull!(pred);
    let truth = nonnull!(truth);
    let out = nonnull_mut!(out);
    match mae_nonzero(&pred.inner, &truth.inner) {
        Ok(v) => {
            *out = v;
            RescastStatus::Ok
        }
        Err(e) => fail_core(e),
    }
}

/// Fractions skill score for events above `threshold` in an odd
/// `neighborhood`-wide window. When neither field has any event the score
/// is undefined and `out` is set to NaN.
#[no_mangle]
pub unsafe extern "C" fn rescast_fss(
    pred: *const RescastGrid,
    truth: *const RescastGrid,
    threshold: f64,
    neighborhood: usize,
    out: *mut f64,
) -> RescastStatus {
    let pred = nonnull!(pred);
    let truth = nonnull!(truth);
    let out = nonnull_mut!(out);
    match fss(&pred.inner, &truth.inner, threshold, neighborhood) {
        Ok(score) => {
            *out = score.unwrap_or(f64::NAN);
            RescastStatus::Ok
        }
        Err(e) => fail_core(e),
    }
}

/// Contingency counts for events above `threshold`. With `wet_only` set,
/// pixels dry in both fields are left out of the comparison.
#[no_mangle]
pub unsafe extern "C" fn rescast_contingency(
    pred: *const RescastGrid,
    truth: *const RescastGrid,
    threshold: f64,
    wet_only: bool,
    out: *mut RescastContingency,
) -> RescastStatus {
    let pred = nonnull!(pred);
    let truth = nonnull!(truth);
    let out = nonnull_mut!(out);
    let counts = if wet_only {
        contingency_wet_only(&pred.inner, &truth.inner, threshold)
    } else {
        contingency(&pred.inner, &truth.inner, threshold)
    };
    match counts {
        Ok(c) => {
            *out = RescastContingency {
                hits: c.hits,
                false_alarms: c.false_alarms,
                misses: c.misses,
                correct_negatives: c.correct_negatives,
            };
            RescastStatus::Ok
        }
        Err(e) => fail_core(e),
    }
}

/// Probability of detection, NaN when no events were observed.
#[no_mangle]
pub extern "C" fn rescast_pod(counts: RescastContingency) -> f64 {
    to_core_counts(counts).pod().unwrap_or(f64::NAN)
}

/// Critical success index, NaN when nothing was observed or predicted.
#[no_mangle]
pub extern "C" fn rescast_csi(counts: RescastContingency) -> f64 {
    to_core_counts(counts).csi().unwrap_or(f64::NAN)
}

fn to_core_counts(c: RescastContingency) -> ContingencyCounts {
    ContingencyCounts {
        hits: c.hits,
        false_alarms: c.false_alarms,
        misses: c.misses,
        correct_negatives: c.correct_negatives,
    }
}

/// Loss weight assigned to a pixel with `rain_mm` of hourly rain, from the
/// reference intensity curve.
#[no_mangle]
pub extern "C" fn rescast_intensity_weight(rain_mm: f64) -> f64 {
    WeightCurve::default().weight(rain_mm)
}

/// Preconditioner gains at noise level `sigma` for data scale `sigma_data`.
#[no_mangle]
pub unsafe extern "C" fn rescast_edm_coeffs(
    sigma: f64,
    sigma_data: f64,
    out: *mut RescastEdmCoeffs,
) -> RescastStatus {
    let out = nonnull_mut!(out);
    match edm_coeffs(sigma, sigma_data) {
        Ok(c) => {
            *out = RescastEdmCoeffs {
                c_skip: c.c_skip,
                c_out: c.c_out,
                c_in: c.c_in,
                c_noise: c.c_noise,
            };
            RescastStatus::Ok
        }
        Err(e) => fail_core(e),
    }
}

/// Load a trained denoiser from a checkpoint file.
#[no_mangle]
pub unsafe extern "C" fn rescast_denoiser_load(
    path: *const c_char,
    out: *mut *mut RescastDenoiser,
) -> RescastStatus {
    let path = cstr!(path);
    let out = nonnull_mut!(out);
    match load_checkpoint(path) {
        Ok((net, _meta)) => {
            *out = Box::into_raw(Box::new(RescastDenoiser { inner: Box::new(net) }));
            RescastStatus::Ok
        }
        Err(e) => fail_core(e),
    }
}

/// Build a denoiser whose clean estimate is everywhere `value`, regardless
/// of input or conditioning. Sampling from it returns exactly that
/// constant, which makes it the zero-knowledge baseline and a handy
/// fixture for exercising the sampler.
#[no_mangle]
pub unsafe extern "C" fn rescast_denoiser_constant(
    ny: usize,
    nx: usize,
    value: f64,
    sigma_data: f64,
    out: *mut *mut RescastDenoiser,
) -> RescastStatus {
    let out = nonnull_mut!(out);
    if ny == 0 || nx == 0 {
        return fail(RescastStatus::InvalidArgument, "grid dimensions must be positive");
    }
    if !value.is_finite() {
        return fail(RescastStatus::InvalidArgument, format!("target value {value} not finite"));
    }
    if !(sigma_data > 0.0) || !sigma_data.is_finite() {
        return fail(
            RescastStatus::InvalidArgument,
            format!("data scale {sigma_data} must be positive"),
        );
    }
    let oracle = OracleDenoiser::constant(ny, nx, value, sigma_data);
    *out = Box::into_raw(Box::new(RescastDenoiser { inner: Box::new(oracle) }));
    RescastStatus::Ok
}

/// Number of conditioning channels the denoiser requires, or -1 when it
/// accepts any conditioning stack.
#[no_mangle]
pub unsafe extern "C" fn rescast_denoiser_cond_channels(
    denoiser: *const RescastDenoiser,
    out: *mut i64,
) -> RescastStatus {
    let denoiser = nonnull!(denoiser);
    let out = nonnull_mut!(out);
    *out = match denoiser.inner.cond_channels() {
        Some(c) => c as i64,
        None => -1,
    };
    RescastStatus::Ok
}

/// Release a denoiser handle. Null is accepted and ignored.
#[no_mangle]
pub unsafe extern "C" fn rescast_denoiser_free(denoiser: *mut RescastDenoiser) {
    if !denoiser.is_null() {
        drop(Box::from_raw(denoiser));
    }
}

/// Draw one deterministic sample of shape ny-by-nx. `cond` holds
/// `channels` row-major planes of ny*nx doubles and may be null when
/// `channels` is zero. Identical arguments and seed give bit-identical
/// output. The result lands in `out`, ny*nx row-major doubles, in the
/// denoiser's normalized units.
#[no_mangle]
pub unsafe extern "C" fn rescast_heun_sample(
    denoiser: *const RescastDenoiser,
    cond: *const f64,
    channels: usize,
    ny: usize,
    nx: usize,
    schedule: *const RescastSchedule,
    sigma_data: f64,
    seed: u64,
    out: *mut f64,
) -> RescastStatus {
    let denoiser = nonnull!(denoiser);
    let schedule = nonnull!(schedule);
    if out.is_null() {
        return fail(RescastStatus::NullPointer, "out is null");
    }
    if cond.is_null() && channels != 0 {
        return fail(RescastStatus::NullPointer, "cond is null but channels is nonzero");
    }
    let total = match channels.checked_mul(ny).and_then(|v| v.checked_mul(nx)) {
        Some(t) => t,
        None => return fail(RescastStatus::InvalidArgument, "conditioning stack size overflows"),
    };
    let stack = if channels == 0 {
        Vec::new()
    } else {
        std::slice::from_raw_parts(cond, total).to_vec()
    };
    let cond = match Array3::from_shape_vec((channels, ny, nx), stack) {
        Ok(a) => a,
        Err(e) => return fail(RescastStatus::InvalidArgument, e.to_string()),
    };
    let sched = match SigmaSchedule::karras(&ScheduleConfig {
        sigma_min: schedule.sigma_min,
        sigma_max: schedule.sigma_max,
        rho: schedule.rho,
        steps: schedule.steps,
    }) {
        Ok(s) => s,
        Err(e) => return fail_core(e),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match heun_sample(denoiser.inner.as_ref(), &cond, &sched, sigma_data, &mut rng) {
        Ok(sample) => {
            let flat: Array2<f64> = sample;
            for (i, v) in flat.iter().enumerate() {
                *out.add(i) = *v;
            }
            RescastStatus::Ok
        }
        Err(e) => fail_core(e),
    }
}

/// Build the three-member scenario envelope around an on-time forecast.
/// `forecast_early` and `forecast_late` are the same cycle's leads one
/// hour before and after `forecast_on`; `residual` is the correction valid
/// with the on-time member and must carry the "residual" variable tag. On
/// success three new grid handles come back: pointwise lower bound,
/// corrected on-time field, and upper bound.
#[no_mangle]
pub unsafe extern "C" fn rescast_scenarios(
    forecast_early: *const RescastGrid,
    forecast_on: *const RescastGrid,
    forecast_late: *const RescastGrid,
    residual: *const RescastGrid,
    out_lower: *mut *mut RescastGrid,
    out_middle: *mut *mut RescastGrid,
    out_upper: *mut *mut RescastGrid,
) -> RescastStatus {
    let forecast_early = nonnull!(forecast_early);
    let forecast_on = nonnull!(forecast_on);
    let forecast_late = nonnull!(forecast_late);
    let residual = nonnull!(residual);
    let out_lower = nonnull_mut!(out_lower);
    let out_middle = nonnull_mut!(out_middle);
    let out_upper = nonnull_mut!(out_upper);
    match make_scenarios(&forecast_early.inner, &forecast_on.inner, &forecast_late.inner, &residual.inner)
    {
        Ok(bounds) => {
            *out_lower = Box::into_raw(Box::new(RescastGrid { inner: bounds.lower }));
            *out_middle = Box::into_raw(Box::new(RescastGrid { inner: bounds.middle }));
            *out_upper = Box::into_raw(Box::new(RescastGrid { inner: bounds.upper }));
            RescastStatus::Ok
        }
        Err(e) => fail_core(e),
    }
}
