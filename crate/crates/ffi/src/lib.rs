//! C ABI over `specdec-core`.
//!
//! Configurations cross the boundary as JSON strings and come back as opaque
//! handles owned by the caller, released with the matching `_free`. Every
//! fallible call returns a [`SpecdecStatus`]; on failure the message is
//! available from [`specdec_last_error_message`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use specdec_core::drafting::DraftSpec;
use specdec_core::perf_model::{CostMode, CostModel, HardwareSpec, ModelArch, Workload};
use specdec_core::planner::Planner;
use specdec_core::presets;
use specdec_core::simulator::{simulate_sd, SimConfig};
use specdec_core::speedup::{self, MinAcceptance, SpeedupReport};
use specdec_core::Error;

pub struct SpecdecHardware(HardwareSpec);

pub struct SpecdecModel(ModelArch);

pub struct SpecdecDraft(DraftSpec);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpecdecStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    /// No acceptance rate reaches the requested speedup.
    Infeasible = 4,
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpecdecCostMode {
    Additive = 0,
    Roofline = 1,
}

impl From<SpecdecCostMode> for CostModel {
    fn from(mode: SpecdecCostMode) -> Self {
        match mode {
            SpecdecCostMode::Additive => CostMode::Additive.into(),
            SpecdecCostMode::Roofline => CostMode::RooflineMax.into(),
        }
    }
}

/// Step latency components in seconds.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SpecdecBreakdown {
    pub param_load_s: f64,
    pub kv_load_s: f64,
    pub act_load_s: f64,
    pub compute_s: f64,
    pub total_s: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SpecdecReport {
    pub t_target_s: f64,
    pub t_draft_s: f64,
    pub t_select_s: f64,
    pub t_verify_s: f64,
    pub gamma: u32,
    pub alpha: f64,
    pub omega: f64,
    pub t_sd_avg_s: f64,
    pub speedup: f64,
}

impl From<SpeedupReport> for SpecdecReport {
    fn from(r: SpeedupReport) -> Self {
        Self {
            t_target_s: r.t_target_s,
            t_draft_s: r.t_draft_s,
            t_select_s: r.t_select_s,
            t_verify_s: r.t_verify_s,
            gamma: r.gamma,
            alpha: r.alpha,
            omega: r.omega,
            t_sd_avg_s: r.t_sd_avg_s,
            speedup: r.speedup,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SpecdecSimResult {
    pub total_tokens: u64,
    pub total_steps: u64,
    pub uncapped_steps: u64,
    pub misaligned_steps: u64,
    pub model_time_s: f64,
    pub empirical_omega: f64,
    pub empirical_speedup: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> SpecdecStatus {
    match err {
        Error::Json(_) | Error::Config { .. } | Error::Csv(_) | Error::Table { .. } => SpecdecStatus::Parse,
        _ => SpecdecStatus::InvalidArgument,
    }
}

struct Failure(SpecdecStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(SpecdecStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, clearing the last error on success and recording it otherwise.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SpecdecStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SpecdecStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(panic) => {
            let message = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(format!("internal panic: {message}"));
            SpecdecStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(SpecdecStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn write_out<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    out.write(value);
    Ok(())
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn specdec_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn specdec_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

unsafe fn new_handle<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    write_out(out, Box::into_raw(Box::new(value)))
}

unsafe fn free_handle<T>(handle: *mut T) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

fn unknown_preset(kind: &str, name: &str) -> Failure {
    Failure(SpecdecStatus::InvalidArgument, format!("unknown {kind} preset `{name}`"))
}

/// Parses a hardware JSON configuration into a new handle.
///
/// # Safety
/// `json` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn specdec_hardware_from_json(json: *const c_char, out: *mut *mut SpecdecHardware) -> SpecdecStatus {
    guard(|| new_handle(out, SpecdecHardware(HardwareSpec::from_json(str_arg(json, "json")?)?)))
}

/// Built-in hardware by name, e.g. `8xA100-80GB`.
///
/// # Safety
/// `name` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn specdec_hardware_preset(name: *const c_char, out: *mut *mut SpecdecHardware) -> SpecdecStatus {
    guard(|| {
        let name = str_arg(name, "name")?;
        let hw = presets::hardware_presets()
            .into_iter()
            .find(|h| h.name == name)
            .ok_or_else(|| unknown_preset("hardware", name))?;
        new_handle(out, SpecdecHardware(hw))
    })
}

/// Releases a hardware handle. Null is ignored.
///
/// # Safety
/// `handle` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn specdec_hardware_free(handle: *mut SpecdecHardware) {
    free_handle(handle)
}

/// Parses a model JSON configuration into a new handle.
///
/// # Safety
/// `json` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn specdec_model_from_json(json: *const c_char, out: *mut *mut SpecdecModel) -> SpecdecStatus {
    guard(|| new_handle(out, SpecdecModel(ModelArch::from_json(str_arg(json, "json")?)?)))
}

/// Built-in model by name, e.g. `llama3-8b`.
///
/// # Safety
/// `name` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn specdec_model_preset(name: *const c_char, out: *mut *mut SpecdecModel) -> SpecdecStatus {
    guard(|| {
        let name = str_arg(name, "name")?;
        let model = presets::model_presets()
            .into_iter()
            .find(|m| m.name == name)
            .ok_or_else(|| unknown_preset("model", name))?;
        new_handle(out, SpecdecModel(model))
    })
}

/// Releases a model handle. Null is ignored.
///
/// # Safety
/// `handle` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn specdec_model_free(handle: *mut SpecdecModel) {
    free_handle(handle)
}

/// Parses a draft strategy JSON into a new handle.
///
/// # Safety
/// `json` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn specdec_draft_from_json(json: *const c_char, out: *mut *mut SpecdecDraft) -> SpecdecStatus {
    guard(|| new_handle(out, SpecdecDraft(DraftSpec::from_json(str_arg(json, "json")?)?)))
}

/// Releases a draft handle. Null is ignored.
///
/// # Safety
/// `handle` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn specdec_draft_free(handle: *mut SpecdecDraft) {
    free_handle(handle)
}

/// Latency of one target step over `n_tokens` positions.
///
/// # Safety
/// Handles must be live and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn specdec_decode_step_time(
    hw: *const SpecdecHardware,
    model: *const SpecdecModel,
    batch: u64,
    seq_len: u64,
    n_tokens: u64,
    mode: SpecdecCostMode,
    out: *mut SpecdecBreakdown,
) -> SpecdecStatus {
    guard(|| {
        let (hw, model) = (ref_arg(hw, "hw")?, ref_arg(model, "model")?);
        let b = CostModel::from(mode).step_time(&hw.0, &model.0, batch, seq_len, n_tokens)?;
        write_out(
            out,
            SpecdecBreakdown {
                param_load_s: b.param_load_s,
                kv_load_s: b.kv_load_s,
                act_load_s: b.act_load_s,
                compute_s: b.compute_s,
                total_s: b.total_s,
            },
        )
    })
}

/// Expected tokens per verification cycle.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn specdec_expected_gen_len(gamma: u32, alpha: f64, out: *mut f64) -> SpecdecStatus {
    guard(|| write_out(out, speedup::expected_gen_len(gamma, alpha)?))
}

fn planner(hw: &SpecdecHardware, model: &SpecdecModel, mode: SpecdecCostMode) -> Planner {
    Planner::new(hw.0.clone(), model.0.clone(), mode.into())
}

/// Speculative decoding report at fixed `gamma` and `alpha`.
///
/// # Safety
/// Handles must be live and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn specdec_analyze(
    hw: *const SpecdecHardware,
    model: *const SpecdecModel,
    draft: *const SpecdecDraft,
    batch: u64,
    seq_len: u64,
    gamma: u32,
    alpha: f64,
    mode: SpecdecCostMode,
    out: *mut SpecdecReport,
) -> SpecdecStatus {
    guard(|| {
        let p = planner(ref_arg(hw, "hw")?, ref_arg(model, "model")?, mode);
        let r = p.analyze(&ref_arg(draft, "draft")?.0, batch, seq_len, gamma, alpha)?;
        write_out(out, r.into())
    })
}

/// Report at the best `gamma` in `1..=gamma_max`.
///
/// # Safety
/// Handles must be live and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn specdec_optimize_gamma(
    hw: *const SpecdecHardware,
    model: *const SpecdecModel,
    draft: *const SpecdecDraft,
    batch: u64,
    seq_len: u64,
    alpha: f64,
    gamma_max: u32,
    mode: SpecdecCostMode,
    out: *mut SpecdecReport,
) -> SpecdecStatus {
    guard(|| {
        let p = planner(ref_arg(hw, "hw")?, ref_arg(model, "model")?, mode);
        let (_, r) = p.optimize_gamma(&ref_arg(draft, "draft")?.0, batch, seq_len, alpha, gamma_max)?;
        write_out(out, r.into())
    })
}

/// Smallest acceptance rate reaching `target_speedup`. Returns
/// `Infeasible` and leaves `out_alpha` untouched when none does.
///
/// # Safety
/// Handles must be live and `out_alpha` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn specdec_min_acceptance(
    hw: *const SpecdecHardware,
    model: *const SpecdecModel,
    draft: *const SpecdecDraft,
    batch: u64,
    seq_len: u64,
    target_speedup: f64,
    gamma_max: u32,
    mode: SpecdecCostMode,
    out_alpha: *mut f64,
) -> SpecdecStatus {
    guard(|| {
        if out_alpha.is_null() {
            return Err(null("out_alpha"));
        }
        let p = planner(ref_arg(hw, "hw")?, ref_arg(model, "model")?, mode);
        match p.min_acceptance(&ref_arg(draft, "draft")?.0, batch, seq_len, target_speedup, gamma_max)? {
            MinAcceptance::Feasible { alpha, .. } => write_out(out_alpha, alpha),
            MinAcceptance::Infeasible => Err(Failure(
                SpecdecStatus::Infeasible,
                format!("speedup {target_speedup} is not reachable with gamma <= {gamma_max}"),
            )),
        }
    })
}

/// Seeded Monte Carlo run of one batch.
///
/// # Safety
/// Handles must be live and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn specdec_simulate(
    hw: *const SpecdecHardware,
    model: *const SpecdecModel,
    draft: *const SpecdecDraft,
    seed: u64,
    batch: u64,
    context_len: u64,
    gen_len: u64,
    gamma: u32,
    alpha: f64,
    mode: SpecdecCostMode,
    out: *mut SpecdecSimResult,
) -> SpecdecStatus {
    guard(|| {
        let (hw, model, draft) = (ref_arg(hw, "hw")?, ref_arg(model, "model")?, ref_arg(draft, "draft")?);
        let cfg = SimConfig {
            seed,
            workload: Workload::new(batch, context_len, gen_len)?,
            gamma,
            alpha,
            draft: draft.0.clone(),
            cost: mode.into(),
        };
        let r = simulate_sd(&hw.0, &model.0, &cfg)?;
        write_out(
            out,
            SpecdecSimResult {
                total_tokens: r.total_tokens,
                total_steps: r.total_steps,
                uncapped_steps: r.uncapped_steps,
                misaligned_steps: r.misaligned_steps,
                model_time_s: r.model_time_s,
                empirical_omega: r.empirical_omega,
                empirical_speedup: r.empirical_speedup,
            },
        )
    })
}
