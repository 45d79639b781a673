//! C ABI over the pathwalk sampler.
//!
//! Every fallible call returns a [`PwStatus`]; on failure the message is
//! available from [`pw_last_error_message`] on the same thread. Samplers are
//! opaque handles created by [`pw_sampler_new_from_toml`] and released with
//! [`pw_sampler_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use pathwalk::analysis::analytic_range_cdf;
use pathwalk::config::RunConfig;
use pathwalk::dynamics::Model;
use pathwalk::observables::Observable;
use pathwalk::pathcore::{RandomStream, TimeGrid};
use pathwalk::run::gradcheck_config;
use pathwalk::sampler::{
    find_initial_point, mh_step, tune_step, ChainStats, ManifoldPoint, Proposal, SamplerConfig,
};
use pathwalk::Error;

/// Result codes shared by all fallible calls.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PwStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Diverged = 4,
    DegenerateNormal = 5,
    ProjectionFailure = 6,
    InitializationFailure = 7,
    Unsupported = 8,
    Io = 9,
    NotInitialized = 10,
    BufferTooSmall = 11,
    Panic = 12,
}

impl From<&Error> for PwStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::InvalidArgument(_) => PwStatus::InvalidArgument,
            Error::Diverged { .. } => PwStatus::Diverged,
            Error::DegenerateNormal => PwStatus::DegenerateNormal,
            Error::ProjectionFailure(_) => PwStatus::ProjectionFailure,
            Error::InitializationFailure { .. } => PwStatus::InitializationFailure,
            Error::Unsupported(_) => PwStatus::Unsupported,
            Error::Config(_) => PwStatus::Config,
            Error::Io(_) => PwStatus::Io,
        }
    }
}

/// Running totals of a sampler handle.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PwStats {
    pub steps: u64,
    pub accepted: u64,
    pub reject_mh: u64,
    pub reject_newton: u64,
    pub reject_reversibility: u64,
    pub blow_up: u64,
    pub acceptance_rate: f64,
    pub mean_newton_iters: f64,
}

/// Opaque sampler handle.
pub struct PwSampler {
    model: Box<dyn Model>,
    obs: Box<dyn Observable>,
    grid: TimeGrid,
    config: SamplerConfig,
    tune: Option<(f64, f64, usize, usize)>,
    rng: RandomStream,
    point: Option<ManifoldPoint>,
    stats: ChainStats,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn fail(status: PwStatus, msg: impl Into<String>) -> PwStatus {
    set_error(msg);
    status
}

fn from_error(e: Error) -> PwStatus {
    let status = PwStatus::from(&e);
    fail(status, e.to_string())
}

/// Run `f`, converting panics into [`PwStatus::Panic`].
fn guard(f: impl FnOnce() -> PwStatus) -> PwStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(PwStatus::Panic, format!("panic: {msg}"))
        }
    }
}

unsafe fn read_str<'a>(s: *const c_char) -> Result<&'a str, PwStatus> {
    if s.is_null() {
        return Err(fail(PwStatus::NullPointer, "string argument is null"));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| fail(PwStatus::InvalidArgument, "string argument is not UTF-8"))
}

unsafe fn copy_out(src: &[f64], buf: *mut f64, len: usize, written: *mut usize) -> PwStatus {
    if !written.is_null() {
        *written = src.len();
    }
    if len < src.len() {
        return fail(
            PwStatus::BufferTooSmall,
            format!("buffer holds {len} values, need {}", src.len()),
        );
    }
    if buf.is_null() {
        return fail(PwStatus::NullPointer, "output buffer is null");
    }
    ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    PwStatus::Ok
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pw_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pw_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Build a sampler from the text of a run configuration. Only the `[model]`,
/// `[observable]` and `[sampler]` tables are used; chains run one at a time
/// through [`pw_sampler_step`] on stream `seed`.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pw_sampler_new_from_toml(
    toml: *const c_char,
    out: *mut *mut PwSampler,
) -> PwStatus {
    guard(|| {
        if out.is_null() {
            return fail(PwStatus::NullPointer, "output handle pointer is null");
        }
        *out = ptr::null_mut();
        let text = match read_str(toml) {
            Ok(t) => t,
            Err(s) => return s,
        };
        let built = RunConfig::from_toml_str(text).and_then(|cfg| {
            let (model, obs) = cfg.instantiate()?;
            let grid = cfg.model.time_grid()?;
            let config = cfg.sampler.to_sampler_config();
            let tune = cfg.sampler.tune.map(|t| (t.low, t.high, t.rounds, t.batch));
            Ok(PwSampler {
                model,
                obs,
                grid,
                rng: RandomStream::for_chain(config.seed, 0),
                stats: ChainStats {
                    seed: config.seed,
                    ..ChainStats::default()
                },
                config,
                tune,
                point: None,
            })
        });
        match built {
            Ok(s) => {
                *out = Box::into_raw(Box::new(s));
                PwStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Release a handle. Null is ignored.
///
/// # Safety
/// `sampler` must be null or a handle from [`pw_sampler_new_from_toml`] that
/// has not been freed.
#[no_mangle]
pub unsafe extern "C" fn pw_sampler_free(sampler: *mut PwSampler) {
    if !sampler.is_null() {
        drop(Box::from_raw(sampler));
    }
}

unsafe fn handle<'a>(sampler: *const PwSampler) -> Result<&'a PwSampler, PwStatus> {
    sampler
        .as_ref()
        .ok_or_else(|| fail(PwStatus::NullPointer, "sampler handle is null"))
}

unsafe fn handle_mut<'a>(sampler: *mut PwSampler) -> Result<&'a mut PwSampler, PwStatus> {
    sampler
        .as_mut()
        .ok_or_else(|| fail(PwStatus::NullPointer, "sampler handle is null"))
}

unsafe fn current<'a>(sampler: *const PwSampler) -> Result<&'a ManifoldPoint, PwStatus> {
    handle(sampler)?.point.as_ref().ok_or_else(|| {
        fail(
            PwStatus::NotInitialized,
            "sampler has no point; call pw_sampler_init",
        )
    })
}

/// Find a point on the level set, then adapt the tangent step if the
/// configuration asks for it.
///
/// # Safety
/// `sampler` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pw_sampler_init(sampler: *mut PwSampler) -> PwStatus {
    guard(|| {
        let s = match handle_mut(sampler) {
            Ok(s) => s,
            Err(st) => return st,
        };
        let c = &s.config;
        let init = match find_initial_point(
            s.model.as_ref(),
            s.obs.as_ref(),
            c.z_target,
            &s.grid,
            &mut s.rng,
            c.newton_tol,
            c.init_maxiter,
        ) {
            Ok(i) => i.point,
            Err(e) => return from_error(e),
        };
        let point = match s.tune {
            Some((low, high, rounds, batch)) => {
                match tune_step(
                    init,
                    s.model.as_ref(),
                    s.obs.as_ref(),
                    c,
                    (low, high),
                    rounds,
                    batch,
                    &mut s.rng,
                ) {
                    Ok((step, p)) => {
                        s.config.proposal = Proposal::TangentRw { step };
                        p
                    }
                    Err(e) => return from_error(e),
                }
            }
            None => init,
        };
        s.point = Some(point);
        PwStatus::Ok
    })
}

/// Advance `steps` Metropolis–Hastings transitions. `accepted` (optional)
/// receives how many of them were accepted.
///
/// # Safety
/// `sampler` must be a live handle; `accepted` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn pw_sampler_step(
    sampler: *mut PwSampler,
    steps: usize,
    accepted: *mut usize,
) -> PwStatus {
    guard(|| {
        let s = match handle_mut(sampler) {
            Ok(s) => s,
            Err(st) => return st,
        };
        let Some(mut x) = s.point.take() else {
            return fail(
                PwStatus::NotInitialized,
                "sampler has no point; call pw_sampler_init",
            );
        };
        let mut n = 0;
        for _ in 0..steps {
            match mh_step(
                x.clone(),
                s.model.as_ref(),
                s.obs.as_ref(),
                &s.config,
                &mut s.rng,
            ) {
                Ok(outcome) => {
                    s.stats.record(&outcome);
                    n += outcome.accepted as usize;
                    x = outcome.point;
                }
                Err(e) => {
                    s.point = Some(x);
                    return from_error(e);
                }
            }
        }
        s.point = Some(x);
        if !accepted.is_null() {
            *accepted = n;
        }
        PwStatus::Ok
    })
}

/// Observable value at the current point.
///
/// # Safety
/// `sampler` must be a live handle and `value` valid.
#[no_mangle]
pub unsafe extern "C" fn pw_sampler_value(sampler: *const PwSampler, value: *mut f64) -> PwStatus {
    guard(|| match current(sampler) {
        Ok(_) if value.is_null() => fail(PwStatus::NullPointer, "output pointer is null"),
        Ok(p) => {
            *value = p.value;
            PwStatus::Ok
        }
        Err(s) => s,
    })
}

/// Shape of the model: noise dimension, state dimension and time steps.
///
/// # Safety
/// `sampler` must be a live handle; each output must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn pw_sampler_shape(
    sampler: *const PwSampler,
    noise_dim: *mut usize,
    state_dim: *mut usize,
    steps: *mut usize,
) -> PwStatus {
    guard(|| {
        let s = match handle(sampler) {
            Ok(s) => s,
            Err(st) => return st,
        };
        for (out, v) in [
            (noise_dim, s.model.noise_dim()),
            (state_dim, s.model.state_dim()),
            (steps, s.grid.steps()),
        ] {
            if !out.is_null() {
                *out = v;
            }
        }
        PwStatus::Ok
    })
}

/// Copy the standardized noise `z` (row-major, `steps x noise_dim`) into
/// `buf`. `written` receives the required length even when `len` is short.
///
/// # Safety
/// `sampler` must be a live handle, `buf` must hold `len` doubles, and
/// `written` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn pw_sampler_copy_noise(
    sampler: *const PwSampler,
    buf: *mut f64,
    len: usize,
    written: *mut usize,
) -> PwStatus {
    guard(|| match current(sampler) {
        Ok(p) => copy_out(p.z.as_slice(), buf, len, written),
        Err(s) => s,
    })
}

/// Copy the state path (row-major, `(steps + 1) x state_dim`) into `buf`.
///
/// # Safety
/// As for [`pw_sampler_copy_noise`].
#[no_mangle]
pub unsafe extern "C" fn pw_sampler_copy_path(
    sampler: *const PwSampler,
    buf: *mut f64,
    len: usize,
    written: *mut usize,
) -> PwStatus {
    guard(|| match current(sampler) {
        Ok(p) => copy_out(p.path.as_slice(), buf, len, written),
        Err(s) => s,
    })
}

/// Counters accumulated over all [`pw_sampler_step`] calls.
///
/// # Safety
/// `sampler` must be a live handle and `stats` valid.
#[no_mangle]
pub unsafe extern "C" fn pw_sampler_stats(
    sampler: *const PwSampler,
    stats: *mut PwStats,
) -> PwStatus {
    guard(|| {
        let s = match handle(sampler) {
            Ok(s) => s,
            Err(st) => return st,
        };
        if stats.is_null() {
            return fail(PwStatus::NullPointer, "output pointer is null");
        }
        let c = &s.stats;
        *stats = PwStats {
            steps: c.steps as u64,
            accepted: c.accepted as u64,
            reject_mh: c.reject_mh as u64,
            reject_newton: c.reject_newton as u64,
            reject_reversibility: c.reject_reversibility as u64,
            blow_up: c.blow_up as u64,
            acceptance_rate: c.acceptance_rate(),
            mean_newton_iters: c.mean_newton_iters(),
        };
        PwStatus::Ok
    })
}

/// Adjoint against central-difference gradients for the model and observable
/// of a configuration at `steps` time steps (0 keeps the configured value).
/// `max_discrepancy` receives the largest relative error over `trials` draws.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `max_discrepancy` valid.
#[no_mangle]
pub unsafe extern "C" fn pw_gradient_check(
    toml: *const c_char,
    steps: usize,
    trials: usize,
    seed: u64,
    max_discrepancy: *mut f64,
) -> PwStatus {
    guard(|| {
        if max_discrepancy.is_null() {
            return fail(PwStatus::NullPointer, "output pointer is null");
        }
        let text = match read_str(toml) {
            Ok(t) => t,
            Err(s) => return s,
        };
        let report = RunConfig::from_toml_str(text)
            .and_then(|cfg| gradcheck_config(&cfg, (steps > 0).then_some(steps), trials, seed));
        match report {
            Ok(r) => {
                *max_discrepancy = r.max_discrepancy;
                PwStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// CDF of the range of a standard Brownian bridge, series truncated at
/// `k_max` terms. Returns NaN for NaN input.
#[no_mangle]
pub extern "C" fn pw_analytic_range_cdf(x: f64, k_max: usize) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    analytic_range_cdf(x, k_max.max(1))
}
