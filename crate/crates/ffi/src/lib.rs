//! C interface to `growfrag`.
//!
//! Every function returns a [`GfStatus`]; on failure a message is available
//! from [`gf_last_error_message`] on the same thread. Handles are opaque and
//! must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use growfrag::branching::grow;
use growfrag::diagnostics::{criterion_search, CriterionOptions};
use growfrag::model::ModelConfig;
use growfrag::observable::TestFn;
use growfrag::rng::StreamFamily;
use growfrag::spectral::{malthus_exponent, solve, MalthusOptions, SpectralOptions, SpectralSolution};
use growfrag::{Error, ModelSpec};

/// Status codes returned by every call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Explosion = 4,
    NoRoot = 5,
    Numerical = 6,
    Io = 7,
    Panic = 8,
}

/// A validated model.
pub struct GfModel {
    spec: ModelSpec,
}

/// Estimated Malthus exponent, harmonic function and profile.
pub struct GfSpectral {
    solution: SpectralSolution,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct GfMalthusResult {
    pub lambda: f64,
    pub std_error: f64,
    pub bracket_lo: f64,
    pub bracket_hi: f64,
    pub samples: u64,
    /// 1 when the certified bracket reached the requested tolerance.
    pub converged: i32,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct GfCriterionResult {
    /// 1 when a certifying `(q, x)` pair was found for the large-mass side.
    pub infinity_ok: i32,
    pub q_infinity: f64,
    pub x_infinity: f64,
    /// 1 when a certifying pair was found for the small-mass side.
    pub zero_ok: i32,
    pub q_zero: f64,
    pub x_zero: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> GfStatus {
    match e {
        Error::Domain(_) => GfStatus::InvalidArgument,
        Error::Config { .. } => GfStatus::Config,
        Error::Explosion { .. } => GfStatus::Explosion,
        Error::NoRoot(_) => GfStatus::NoRoot,
        Error::Integration { .. }
        | Error::IllConditionedDerivative { .. }
        | Error::InvalidHarmonic { .. } => GfStatus::Numerical,
        Error::Io { .. } => GfStatus::Io,
    }
}

/// Run `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (GfStatus, String)>) -> GfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GfStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            GfStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (GfStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (GfStatus, String) {
    (GfStatus::NullPointer, format!("{what} is null"))
}

unsafe fn as_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (GfStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (GfStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, (GfStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn write_out<T>(p: *mut T, v: T, what: &str) -> Result<(), (GfStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    p.write(v);
    Ok(())
}

/// Message for the most recent failure on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn gf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Build a model from a TOML model section, e.g.
/// `family = "hump"\na = 3.0\nfission = { kind = "saturating", b = 4.0 }`.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gf_model_from_toml(toml: *const c_char, out: *mut *mut GfModel) -> GfStatus {
    guard(|| {
        let text = as_str(toml, "toml")?;
        let cfg: ModelConfig =
            toml::from_str(text).map_err(|e| (GfStatus::Config, format!("model: {e}")))?;
        let spec = cfg.build().map_err(lib_err)?;
        write_out(out, Box::into_raw(Box::new(GfModel { spec })), "out")
    })
}

/// Build a built-in family with its default parameters.
///
/// # Safety
/// `family` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gf_model_family(family: *const c_char, out: *mut *mut GfModel) -> GfStatus {
    guard(|| {
        let name = as_str(family, "family")?;
        let spec = ModelConfig::family(name).build().map_err(lib_err)?;
        write_out(out, Box::into_raw(Box::new(GfModel { spec })), "out")
    })
}

/// # Safety
/// `model` must come from a `gf_model_*` constructor and not be used again.
#[no_mangle]
pub unsafe extern "C" fn gf_model_free(model: *mut GfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Growth rate `c(x)`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn gf_model_growth(model: *const GfModel, x: f64, out: *mut f64) -> GfStatus {
    guard(|| {
        let m = as_ref(model, "model")?;
        write_out(out, m.spec.c(x), "out")
    })
}

/// Fission rate `B(x)`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn gf_model_fission(model: *const GfModel, x: f64, out: *mut f64) -> GfStatus {
    guard(|| {
        let m = as_ref(model, "model")?;
        write_out(out, m.spec.b(x), "out")
    })
}

/// `sup c(x)/x`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn gf_model_gamma(model: *const GfModel, out: *mut f64) -> GfStatus {
    guard(|| {
        let m = as_ref(model, "model")?;
        write_out(out, m.spec.gamma(), "out")
    })
}

/// Deterministic flow: mass at time `t` starting from `x0`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn gf_model_flow(model: *const GfModel, x0: f64, t: f64, out: *mut f64) -> GfStatus {
    guard(|| {
        let m = as_ref(model, "model")?;
        let v = m.spec.flow(x0, t).map_err(lib_err)?;
        write_out(out, v, "out")
    })
}

/// Simulate one population path (replicate `replicate` of `seed`) and
/// record the number of individuals and the total mass at each of the
/// `n_times` times, which must not exceed `horizon`.
///
/// # Safety
/// `times`, `counts` and `masses` must each point to `n_times` doubles.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn gf_simulate_population(
    model: *const GfModel,
    x0: f64,
    horizon: f64,
    cap: usize,
    seed: u64,
    replicate: u64,
    times: *const f64,
    n_times: usize,
    counts: *mut f64,
    masses: *mut f64,
) -> GfStatus {
    guard(|| {
        let m = as_ref(model, "model")?;
        if n_times > 0 && (times.is_null() || counts.is_null() || masses.is_null()) {
            return Err(null("times, counts or masses"));
        }
        let ts = if n_times == 0 { &[][..] } else { std::slice::from_raw_parts(times, n_times) };
        if ts.iter().any(|&t| !(0.0..=horizon).contains(&t)) {
            return Err((GfStatus::InvalidArgument, "times must lie in [0, horizon]".into()));
        }
        let mut rng = StreamFamily::new(seed, "ffi/simulate").stream(replicate);
        let g = grow(&m.spec, x0, horizon, cap, &mut rng).map_err(lib_err)?;
        let fs = [TestFn::one(), TestFn::identity()];
        for (i, &t) in ts.iter().enumerate() {
            let v = g.observe_many(&m.spec, t, &fs);
            counts.add(i).write(v[0]);
            masses.add(i).write(v[1]);
        }
        Ok(())
    })
}

/// Malthus exponent by certified stochastic bisection. `tolerance` and
/// `n_max` of 0 select the defaults.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn gf_malthus_exponent(
    model: *const GfModel,
    x0: f64,
    seed: u64,
    tolerance: f64,
    n_max: u64,
    out: *mut GfMalthusResult,
) -> GfStatus {
    guard(|| {
        let m = as_ref(model, "model")?;
        let mut opts = MalthusOptions::default();
        if tolerance > 0.0 {
            opts.tolerance = tolerance;
        }
        if n_max > 0 {
            opts.n_max = n_max as usize;
            opts.n_init = opts.n_init.min(opts.n_max);
        }
        let streams = StreamFamily::new(seed, "spectral").child("lambda");
        let l = malthus_exponent(&m.spec, x0, &opts, &streams).map_err(lib_err)?;
        write_out(
            out,
            GfMalthusResult {
                lambda: l.lambda,
                std_error: l.stderr,
                bracket_lo: l.bracket.0,
                bracket_hi: l.bracket.1,
                samples: l.n as u64,
                converged: i32::from(l.converged),
            },
            "out",
        )
    })
}

/// Full spectral estimate. `options_toml` may be null for defaults or hold
/// spectral options such as `n_h = 20000` and `[malthus]` settings.
///
/// # Safety
/// `options_toml` must be null or NUL-terminated; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gf_spectral_solve(
    model: *const GfModel,
    options_toml: *const c_char,
    seed: u64,
    out: *mut *mut GfSpectral,
) -> GfStatus {
    guard(|| {
        let m = as_ref(model, "model")?;
        let opts: SpectralOptions = if options_toml.is_null() {
            SpectralOptions::default()
        } else {
            toml::from_str(as_str(options_toml, "options_toml")?)
                .map_err(|e| (GfStatus::Config, format!("spectral options: {e}")))?
        };
        let solution = solve(&m.spec, &opts, &StreamFamily::new(seed, "spectral")).map_err(lib_err)?;
        write_out(out, Box::into_raw(Box::new(GfSpectral { solution })), "out")
    })
}

/// # Safety
/// `s` must come from `gf_spectral_solve` and not be used again.
#[no_mangle]
pub unsafe extern "C" fn gf_spectral_free(s: *mut GfSpectral) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// # Safety
/// Pointers must be valid; `std_error` may be null.
#[no_mangle]
pub unsafe extern "C" fn gf_spectral_lambda(s: *const GfSpectral, lambda: *mut f64, std_error: *mut f64) -> GfStatus {
    guard(|| {
        let s = as_ref(s, "spectral")?;
        write_out(lambda, s.solution.lambda.lambda, "lambda")?;
        if !std_error.is_null() {
            std_error.write(s.solution.lambda.stderr);
        }
        Ok(())
    })
}

/// Interpolated harmonic function `h(x)`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn gf_spectral_h(s: *const GfSpectral, x: f64, out: *mut f64) -> GfStatus {
    guard(|| {
        let s = as_ref(s, "spectral")?;
        if !(x > 0.0) {
            return Err((GfStatus::InvalidArgument, "x must be positive".into()));
        }
        write_out(out, s.solution.h(x), "out")
    })
}

/// Number of points of the profile grid.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn gf_spectral_nu_len(s: *const GfSpectral, out: *mut usize) -> GfStatus {
    guard(|| {
        let s = as_ref(s, "spectral")?;
        write_out(out, s.solution.nu.profile.grid.len(), "out")
    })
}

/// Copy the profile grid and density (normalized so `<nu, h> = 1`) into
/// buffers of length `len`, which must equal `gf_spectral_nu_len`.
///
/// # Safety
/// `grid` and `density` must each point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn gf_spectral_nu(
    s: *const GfSpectral,
    grid: *mut f64,
    density: *mut f64,
    len: usize,
) -> GfStatus {
    guard(|| {
        let s = as_ref(s, "spectral")?;
        let p = &s.solution.nu.profile;
        if len != p.grid.len() {
            return Err((GfStatus::InvalidArgument, format!("expected len {}", p.grid.len())));
        }
        if grid.is_null() || density.is_null() {
            return Err(null("grid or density"));
        }
        ptr::copy_nonoverlapping(p.grid.as_ptr(), grid, len);
        ptr::copy_nonoverlapping(p.density.as_ptr(), density, len);
        Ok(())
    })
}

/// Grid search for the two sufficient inequalities certifying a positive
/// Malthus exponent, with default search ranges.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn gf_criterion(model: *const GfModel, out: *mut GfCriterionResult) -> GfStatus {
    guard(|| {
        let m = as_ref(model, "model")?;
        let r = criterion_search(&m.spec, &CriterionOptions::default());
        let mut res = GfCriterionResult::default();
        if let Some(c) = r.infinity_side {
            res.infinity_ok = 1;
            res.q_infinity = c.q;
            res.x_infinity = c.x;
        }
        if let Some(c) = r.zero_side {
            res.zero_ok = 1;
            res.q_zero = c.q;
            res.x_zero = c.x;
        }
        write_out(out, res, "out")
    })
}
