//! C ABI over the `rte-aot` library.
//!
//! Scenarios are loaded into opaque [`RteScenario`] handles. Every function
//! returns an [`RteStatus`]; the message of the most recent failure on the
//! calling thread is available through [`rte_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use rte_aot::cli::Loaded;
use rte_aot::functional::Route;
use rte_aot::recon::{recover_k, recover_sigma, KernelSample};
use rte_aot::transport::Solver;
use rte_aot::Error;

/// Result codes of every exported function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RteStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Inadmissible = 4,
    Domain = 5,
    Divergence = 6,
    CheckFailed = 7,
    Io = 8,
    Panic = 9,
}

impl From<&Error> for RteStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Domain(_) => RteStatus::Domain,
            Error::Argument(_) => RteStatus::InvalidArgument,
            Error::Inadmissible(_) => RteStatus::Inadmissible,
            Error::Divergence { .. } => RteStatus::Divergence,
            Error::Check(_) => RteStatus::CheckFailed,
            Error::Config(_) => RteStatus::Config,
            Error::Io(_) => RteStatus::Io,
        }
    }
}

/// Opaque handle to a validated scenario.
pub struct RteScenario {
    loaded: Loaded,
}

/// Convergence record of a forward solve.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct RteDiagnostics {
    pub terms_used: usize,
    pub contraction_observed: f64,
    pub tail_bound: f64,
    /// Non-zero when the series hit `j_max` with a large tail.
    pub tail_warning: i32,
}

/// Admissibility numbers of the scenario medium.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct RteAdmissibility {
    pub rho: f64,
    pub tau: f64,
    pub tau_rho: f64,
    pub sigma_min: f64,
    pub contraction_estimate: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn guard(f: impl FnOnce() -> Result<(), RteStatus>) -> RteStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RteStatus::Ok,
        Ok(Err(status)) => status,
        Err(_) => {
            set_error("internal panic".into());
            RteStatus::Panic
        }
    }
}

fn fail(e: Error) -> RteStatus {
    let status = RteStatus::from(&e);
    set_error(e.to_string());
    status
}

fn null(what: &str) -> RteStatus {
    set_error(format!("{what} is null"));
    RteStatus::NullPointer
}

unsafe fn text<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, RteStatus> {
    if ptr.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error(format!("{what} is not valid UTF-8"));
        RteStatus::InvalidArgument
    })
}

unsafe fn scenario<'a>(ptr: *const RteScenario) -> Result<&'a Loaded, RteStatus> {
    ptr.as_ref().map(|s| &s.loaded).ok_or_else(|| null("scenario"))
}

unsafe fn input<'a>(ptr: *const f64, len: usize, what: &str) -> Result<&'a [f64], RteStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn output<'a>(ptr: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], RteStatus> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

fn points(flat: &[f64]) -> Vec<[f64; 2]> {
    flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect()
}

fn publish(out: *mut *mut RteScenario, loaded: Result<Loaded, Error>) -> Result<(), RteStatus> {
    let loaded = loaded.map_err(fail)?;
    unsafe { *out = Box::into_raw(Box::new(RteScenario { loaded })) };
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rte_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len − 1` bytes) and returns the full message length.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn rte_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Parses and validates scenario TOML text.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rte_scenario_from_toml(toml: *const c_char, out: *mut *mut RteScenario) -> RteStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let t = text(toml, "toml")?;
        publish(out, Loaded::from_text(t))
    })
}

/// Loads and validates a scenario file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rte_scenario_from_path(path: *const c_char, out: *mut *mut RteScenario) -> RteStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let p = text(path, "path")?;
        publish(out, Loaded::from_path(Path::new(p)))
    })
}

/// Releases a scenario handle; null is ignored.
///
/// # Safety
/// `scenario` must come from one of the constructors and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rte_scenario_free(scenario: *mut RteScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// # Safety
/// `scenario` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn rte_scenario_admissibility(
    scenario: *const RteScenario,
    out: *mut RteAdmissibility,
) -> RteStatus {
    guard(|| {
        let l = self::scenario(scenario)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let a = l.admissibility;
        *out = RteAdmissibility {
            rho: a.rho,
            tau: a.tau,
            tau_rho: a.tau_rho,
            sigma_min: a.sigma_min,
            contraction_estimate: a.contraction_estimate,
        };
        Ok(())
    })
}

/// Solves the forward problem with the scenario's `f` and writes
/// `u(x_p, θ_a)` to `out[p·n_angles + a]`.
///
/// # Safety
/// `points` holds `2·n_points` doubles, `angles` holds `n_angles` doubles,
/// `out` has room for `n_points·n_angles` doubles; `diagnostics` may be null.
#[no_mangle]
pub unsafe extern "C" fn rte_forward(
    scenario: *const RteScenario,
    points: *const f64,
    n_points: usize,
    angles: *const f64,
    n_angles: usize,
    out: *mut f64,
    diagnostics: *mut RteDiagnostics,
) -> RteStatus {
    guard(|| {
        let l = self::scenario(scenario)?;
        let pts = self::points(input(points, 2 * n_points, "points")?);
        let angles = input(angles, n_angles, "angles")?;
        let out = output(out, n_points * n_angles, "out")?;
        let solver = Solver::new(&l.medium, &l.grids, l.options).map_err(fail)?;
        let f = l.scenario.experiment.f.build().map_err(fail)?;
        let u = solver.solve_forward(&f).map_err(fail)?;
        for (p, x) in pts.iter().enumerate() {
            for (a, &theta) in angles.iter().enumerate() {
                out[p * n_angles + a] = u.value(*x, theta);
            }
        }
        if let Some(d) = diagnostics.as_mut() {
            let src = u.diagnostics();
            *d = RteDiagnostics {
                terms_used: src.terms_used,
                contraction_observed: src.contraction_observed,
                tail_bound: src.tail_bound,
                tail_warning: i32::from(src.tail_warning),
            };
        }
        Ok(())
    })
}

/// Oracle-route σ reconstruction at `n_points` points (`2·n_points` doubles).
/// Points below the albedo floor get NaN.
///
/// # Safety
/// `points` holds `2·n_points` doubles and `sigma_hat` has room for `n_points`.
#[no_mangle]
pub unsafe extern "C" fn rte_recover_sigma(
    scenario: *const RteScenario,
    theta0: f64,
    h: f64,
    points: *const f64,
    n_points: usize,
    sigma_hat: *mut f64,
) -> RteStatus {
    guard(|| {
        let l = self::scenario(scenario)?;
        let pts = self::points(input(points, 2 * n_points, "points")?);
        let out = output(sigma_hat, n_points, "sigma_hat")?;
        let solver = Solver::new(&l.medium, &l.grids, l.options).map_err(fail)?;
        let r = recover_sigma(&solver, theta0, h, &pts, Route::Oracle, l.scenario.fourier()).map_err(fail)?;
        out.fill(f64::NAN);
        for p in &r.points {
            if let Some(k) = pts.iter().position(|x| *x == p.x) {
                out[k] = p.sigma_hat;
            }
        }
        Ok(())
    })
}

/// Oracle-route kernel reconstruction with σ taken from the scenario.
/// `samples` holds `n_samples` records `(x1, x2, θ₁, θ₂)`.
///
/// # Safety
/// `samples` holds `4·n_samples` doubles and `k_hat` has room for `n_samples`.
#[no_mangle]
pub unsafe extern "C" fn rte_recover_k(
    scenario: *const RteScenario,
    h: f64,
    samples: *const f64,
    n_samples: usize,
    k_hat: *mut f64,
) -> RteStatus {
    guard(|| {
        let l = self::scenario(scenario)?;
        let raw = input(samples, 4 * n_samples, "samples")?;
        let out = output(k_hat, n_samples, "k_hat")?;
        let samples: Vec<KernelSample> =
            raw.chunks_exact(4).map(|c| KernelSample { x: [c[0], c[1]], theta1: c[2], theta2: c[3] }).collect();
        let solver = Solver::new(&l.medium, &l.grids, l.options).map_err(fail)?;
        let r = recover_k(&solver, &l.medium, &samples, h, Route::Oracle, l.scenario.fourier()).map_err(fail)?;
        for (o, p) in out.iter_mut().zip(&r.points) {
            *o = p.k_hat;
        }
        Ok(())
    })
}
