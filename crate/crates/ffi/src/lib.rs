//! C ABI over the imaging library.
//!
//! Every entry point returns an [`IncimgStatus`]; outputs go through
//! pointer arguments. Objects are opaque handles released with their
//! matching `*_free` function. On failure the message is kept per thread
//! and read with [`incimg_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use incimg::forward::{run_perturbed, run_reference, trace_difference, BoundaryTrace, ForwardOptions};
use incimg::harness::config::{parse_json, ExperimentConfig};
use incimg::identify::{detect_peaks, estimate_tensors, invert_spectrum, sample_spectrum, ReconstructionResult, SpectralGrid};
use incimg::model::{InclusionShape, PlaneWaveProbe};
use incimg::potentials::{shape_tensor, DerivativeSide};
use incimg::Error;

/// Result code of every call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IncimgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    InvalidScenario = 4,
    InvalidGrid = 5,
    InvalidArgument = 6,
    Numerical = 7,
    Io = 8,
    OutOfRange = 9,
    Panic = 10,
}

/// Experiment configuration (scenario, grid, probe, lattice, noise).
pub struct IncimgExperiment(ExperimentConfig);

/// Boundary trace, time-major.
pub struct IncimgTrace(BoundaryTrace);

/// Centers and tensors found by a reconstruction.
pub struct IncimgReconstruction(ReconstructionResult);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> IncimgStatus {
    match e {
        Error::Config(_) | Error::Json(_) => IncimgStatus::Config,
        Error::InvalidScenario(_) | Error::DegenerateShape(_) => IncimgStatus::InvalidScenario,
        Error::InvalidGrid(_) | Error::Cfl { .. } | Error::GridTooCoarse { .. } | Error::GridMismatch(_) => {
            IncimgStatus::InvalidGrid
        }
        Error::InvalidArgument(_) | Error::Margin(_) | Error::IncompleteLattice(_) => IncimgStatus::InvalidArgument,
        Error::Unstable { .. }
        | Error::IllConditioned(_)
        | Error::GeometricControl(_)
        | Error::RankDeficient { .. } => IncimgStatus::Numerical,
        Error::Io(_) | Error::Csv(_) => IncimgStatus::Io,
    }
}

struct Failure(IncimgStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn fail(status: IncimgStatus, msg: &str) -> Failure {
    Failure(status, msg.into())
}

/// Runs `f`, records any error or panic and converts it to a status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> IncimgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            IncimgStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            IncimgStatus::Panic
        }
    }
}

unsafe fn text<'a>(s: *const c_char) -> Result<&'a str, Failure> {
    if s.is_null() {
        return Err(fail(IncimgStatus::NullPointer, "null string"));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| fail(IncimgStatus::InvalidUtf8, "string is not valid UTF-8"))
}

unsafe fn deref<'a, T>(p: *const T) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| fail(IncimgStatus::NullPointer, "null handle"))
}

unsafe fn write<T>(out: *mut T, v: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(fail(IncimgStatus::NullPointer, "null output pointer"));
    }
    out.write(v);
    Ok(())
}

unsafe fn out_slice<'a>(out: *mut f64, len: usize) -> Result<&'a mut [f64], Failure> {
    if out.is_null() {
        return Err(fail(IncimgStatus::NullPointer, "null output buffer"));
    }
    Ok(std::slice::from_raw_parts_mut(out, len))
}

/// Message of the last failed call on this thread, or null after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn incimg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn incimg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses and validates an experiment configuration from JSON text.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn incimg_experiment_from_json(json: *const c_char, out: *mut *mut IncimgExperiment) -> IncimgStatus {
    guard(|| {
        let cfg = ExperimentConfig::from_json(text(json)?)?;
        write(out, Box::into_raw(Box::new(IncimgExperiment(cfg))))
    })
}

/// # Safety
/// `exp` must come from [`incimg_experiment_from_json`] or be null.
#[no_mangle]
pub unsafe extern "C" fn incimg_experiment_free(exp: *mut IncimgExperiment) {
    if !exp.is_null() {
        drop(Box::from_raw(exp));
    }
}

/// Number of inclusions in the experiment's scenario.
///
/// # Safety
/// `exp` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn incimg_experiment_inclusion_count(exp: *const IncimgExperiment, out: *mut usize) -> IncimgStatus {
    guard(|| write(out, deref(exp)?.0.scenario.inclusions.len()))
}

/// Simulates the boundary trace for the plane-wave probe `(eta_x, eta_y)`.
/// With `difference` nonzero the homogeneous reference is subtracted.
///
/// # Safety
/// `exp` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn incimg_forward(
    exp: *const IncimgExperiment,
    eta_x: f64,
    eta_y: f64,
    difference: i32,
    out: *mut *mut IncimgTrace,
) -> IncimgStatus {
    guard(|| {
        let cfg = &deref(exp)?.0;
        let s = &cfg.scenario;
        let p = PlaneWaveProbe::new([eta_x, eta_y], &s.domain)?;
        let mut trace = run_perturbed(s, &cfg.grid, &p, &ForwardOptions::default())?.trace;
        if difference != 0 {
            trace = trace_difference(&trace, &run_reference(s, &cfg.grid, &p)?)?;
        }
        write(out, Box::into_raw(Box::new(IncimgTrace(trace))))
    })
}

/// # Safety
/// `trace` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn incimg_trace_free(trace: *mut IncimgTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

/// Number of time levels and boundary samples.
///
/// # Safety
/// `trace` must be a live handle; output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn incimg_trace_shape(trace: *const IncimgTrace, n_times: *mut usize, n_arc: *mut usize) -> IncimgStatus {
    guard(|| {
        let t = &deref(trace)?.0;
        write(n_times, t.n_times())?;
        write(n_arc, t.n_arc())
    })
}

/// Copies the trace as interleaved `(re, im)` pairs, time-major, into
/// `out`, which must hold `2 * n_times * n_arc` doubles.
///
/// # Safety
/// `trace` must be a live handle and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn incimg_trace_copy(trace: *const IncimgTrace, out: *mut f64, len: usize) -> IncimgStatus {
    guard(|| {
        let t = &deref(trace)?.0;
        let need = 2 * t.values.len();
        if len < need {
            return Err(Failure(
                IncimgStatus::OutOfRange,
                format!("buffer holds {len} doubles, {need} needed"),
            ));
        }
        let buf = out_slice(out, need)?;
        for (pair, v) in buf.chunks_exact_mut(2).zip(&t.values) {
            pair[0] = v.re;
            pair[1] = v.im;
        }
        Ok(())
    })
}

/// Time step and arclength step of the trace sampling.
///
/// # Safety
/// `trace` must be a live handle; output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn incimg_trace_steps(trace: *const IncimgTrace, dt: *mut f64, ds: *mut f64) -> IncimgStatus {
    guard(|| {
        let t = &deref(trace)?.0;
        write(dt, t.dt())?;
        write(ds, t.weights.first().copied().unwrap_or(0.0))
    })
}

/// Polarization tensor of a shape given as JSON (for example
/// `{"kind": "disk", "radius": 1.0}`), row-major into `out[4]`.
/// `outside` nonzero selects the exterior derivative convention.
///
/// # Safety
/// `shape_json` must be a NUL-terminated string and `out` must hold 4 doubles.
#[no_mangle]
pub unsafe extern "C" fn incimg_shape_tensor(
    shape_json: *const c_char,
    contrast: f64,
    nodes: usize,
    outside: i32,
    out: *mut f64,
) -> IncimgStatus {
    guard(|| {
        let shape: InclusionShape = parse_json(text(shape_json)?)?;
        let side = if outside != 0 { DerivativeSide::Outside } else { DerivativeSide::Inside };
        let m = shape_tensor(&shape, contrast, nodes, side)?.m;
        out_slice(out, 4)?.copy_from_slice(&[m[0][0], m[0][1], m[1][0], m[1][1]]);
        Ok(())
    })
}

/// Samples the spectrum on the configured lattice (default 17 x 17 up to
/// `|eta| = 8`), inverts it and fits tensors at the detected peaks.
///
/// # Safety
/// `exp` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn incimg_reconstruct(exp: *const IncimgExperiment, out: *mut *mut IncimgReconstruction) -> IncimgStatus {
    guard(|| {
        let cfg = &deref(exp)?.0;
        let s = &cfg.scenario;
        let grid = cfg.spectral.unwrap_or(SpectralGrid { eta_max: 8.0, n: 17 });
        let alpha = s
            .inclusions
            .first()
            .map(|i| i.alpha)
            .ok_or_else(|| fail(IncimgStatus::InvalidScenario, "the scenario has no inclusion to set alpha"))?;
        let samples = sample_spectrum(s, &cfg.grid, &grid, &cfg.pipeline_params())?;
        let img = invert_spectrum(&samples, &grid, &s.domain.rect)?;
        let peaks = detect_peaks(&img, cfg.reconstruction.rel_threshold, cfg.min_separation());
        if peaks.is_empty() {
            return Err(fail(IncimgStatus::Numerical, "no peak above the threshold"));
        }
        let centers: Vec<[f64; 2]> = peaks.iter().map(|p| p.center).collect();
        let r = estimate_tensors(&samples, &centers, alpha, s.domain.mu0)?;
        write(out, Box::into_raw(Box::new(IncimgReconstruction(r))))
    })
}

/// # Safety
/// `r` must come from [`incimg_reconstruct`] or be null.
#[no_mangle]
pub unsafe extern "C" fn incimg_reconstruction_free(r: *mut IncimgReconstruction) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

/// Number of detected centers.
///
/// # Safety
/// `r` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn incimg_reconstruction_count(r: *const IncimgReconstruction, out: *mut usize) -> IncimgStatus {
    guard(|| write(out, deref(r)?.0.centers.len()))
}

/// Center `index` into `center[2]` and its tensor, row-major, into `tensor[4]`.
///
/// # Safety
/// `r` must be a live handle; `center` and `tensor` must hold 2 and 4 doubles.
#[no_mangle]
pub unsafe extern "C" fn incimg_reconstruction_get(
    r: *const IncimgReconstruction,
    index: usize,
    center: *mut f64,
    tensor: *mut f64,
) -> IncimgStatus {
    guard(|| {
        let r = &deref(r)?.0;
        if index >= r.centers.len() {
            return Err(Failure(
                IncimgStatus::OutOfRange,
                format!("index {index} out of {} centers", r.centers.len()),
            ));
        }
        out_slice(center, 2)?.copy_from_slice(&r.centers[index]);
        let q = r.tensors[index];
        out_slice(tensor, 4)?.copy_from_slice(&[q[0][0], q[0][1], q[1][0], q[1][1]]);
        Ok(())
    })
}
