//! C ABI for the solver: opaque handles over instances and policies, error
//! codes mirroring the CLI exit conventions, and a thread-local message for
//! the last error. The header in `include/qdp.h` is generated by cbindgen
//! at build time.

use std::cell::RefCell;
use std::ffi::{c_char, c_double, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use qdp::config::InstanceConfig;
use qdp::policy::{load_policy, save_policy, to_pure_policy, PartitionedPolicy, PolicyTable};
use qdp::pricing::efficient::QplexEngine;
use qdp::pricing::PricingModel;
use qdp::sim::simulate_policy;
use qdp::train::{train, EpisodeEngine, TrainParams};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QdpStatus {
    Ok = 0,
    /// Bad arguments, unreadable files, or malformed configuration.
    Usage = 1,
    /// A numerical invariant or domain contract failed.
    Invariant = 2,
    /// A resource guard refused the computation.
    Guard = 3,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &qdp::Error) -> QdpStatus {
    match err.exit_code() {
        3 => QdpStatus::Guard,
        1 => QdpStatus::Usage,
        _ => QdpStatus::Invariant,
    }
}

/// Copies the message of the most recent error on this thread into `buf`
/// (NUL-terminated, truncated to `len`). Returns the full message length.
///
/// # Safety
/// `buf` must point to `len` writable bytes, or be null (then only the
/// length is returned).
#[no_mangle]
pub unsafe extern "C" fn qdp_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let msg = slot.borrow();
        let bytes = msg.as_bytes_with_nul();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len);
            ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            // Guarantee termination even when truncated.
            *buf.add(n - 1) = 0;
        }
        bytes.len() - 1
    })
}

/// An instance handle: the resolved pricing model.
pub struct QdpModel {
    model: PricingModel,
}

/// A policy handle: a state-partitioned tabular policy over the counters.
pub struct QdpPolicy {
    policy: PartitionedPolicy,
}

/// Objective decomposition of a policy evaluation.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct QdpValue {
    pub total: c_double,
    pub revenue: c_double,
    pub waiting: c_double,
    pub penalty: c_double,
    pub terminal_cost: c_double,
}

/// Monte Carlo summary of a simulated policy.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct QdpSimSummary {
    pub mean: c_double,
    pub revenue: c_double,
    pub waiting: c_double,
    pub terminal: c_double,
    pub std_error: c_double,
    pub ci_halfwidth: c_double,
    pub max_violation: c_double,
    pub reps: u64,
}

unsafe fn cstr<'a>(ptr: *const c_char) -> Result<&'a str, QdpStatus> {
    if ptr.is_null() {
        set_error("null string argument");
        return Err(QdpStatus::Usage);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error("string argument is not valid UTF-8");
        QdpStatus::Usage
    })
}

fn guard<T>(body: impl FnOnce() -> Result<T, QdpStatus>) -> Result<T, QdpStatus> {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(result) => result,
        Err(_) => {
            set_error("internal panic");
            Err(QdpStatus::Invariant)
        }
    }
}

fn model_from_config(text: &str) -> Result<PricingModel, QdpStatus> {
    let config = InstanceConfig::parse(text).map_err(|e| {
        set_error(&e.to_string());
        status_of(&e)
    })?;
    config.to_model().map_err(|e| {
        set_error(&e.to_string());
        status_of(&e)
    })
}

/// Parses a TOML instance configuration into a model handle. Returns null
/// on failure (see `qdp_last_error_message`).
///
/// # Safety
/// `text` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn qdp_model_parse(text: *const c_char) -> *mut QdpModel {
    let result = guard(|| {
        let text = cstr(text)?;
        let model = model_from_config(text)?;
        Ok(Box::into_raw(Box::new(QdpModel { model })))
    });
    result.unwrap_or(ptr::null_mut())
}

/// Loads a TOML instance configuration file. Returns null on failure.
///
/// # Safety
/// `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn qdp_model_load(path: *const c_char) -> *mut QdpModel {
    let result = guard(|| {
        let path = cstr(path)?;
        let text = std::fs::read_to_string(path).map_err(|e| {
            set_error(&format!("{path}: {e}"));
            QdpStatus::Usage
        })?;
        let model = model_from_config(&text)?;
        Ok(Box::into_raw(Box::new(QdpModel { model })))
    });
    result.unwrap_or(ptr::null_mut())
}

/// Frees a model handle (null is a no-op).
///
/// # Safety
/// `model` must have been returned by a `qdp_model_*` constructor and not
/// freed before.
#[no_mangle]
pub unsafe extern "C" fn qdp_model_free(model: *mut QdpModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of counter values (experts) of the instance.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn qdp_model_counters(model: *const QdpModel) -> usize {
    (*model).model.space.counters
}

/// Number of decision epochs of the instance.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn qdp_model_horizon(model: *const QdpModel) -> usize {
    (*model).model.spec.horizon
}

/// Number of grid prices (actions) of the instance.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn qdp_model_actions(model: *const QdpModel) -> usize {
    (*model).model.spec.action_count()
}

/// Trains a policy with exponentiated Q-ascent and writes a policy handle
/// to `out`. `max_episodes = 0` uses the default cap.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qdp_train(
    model: *const QdpModel,
    eta: c_double,
    epsilon: c_double,
    max_episodes: u64,
    adaptive: bool,
    out: *mut *mut QdpPolicy,
) -> QdpStatus {
    let result = guard(|| {
        if model.is_null() || out.is_null() {
            set_error("null handle");
            return Err(QdpStatus::Usage);
        }
        if !(eta > 0.0) || !(epsilon > 0.0) {
            set_error("eta and epsilon must be positive");
            return Err(QdpStatus::Usage);
        }
        let model = &(*model).model;
        let engine = QplexEngine::new(model);
        let params = TrainParams {
            eta,
            epsilon,
            max_episodes: if max_episodes == 0 {
                TrainParams::default().max_episodes
            } else {
                max_episodes as usize
            },
            adaptive,
            snapshot_every: None,
        };
        let trace = train(&engine, &model.uniform_count_policy(), &params).map_err(|e| {
            set_error(&e.to_string());
            status_of(&e)
        })?;
        *out = Box::into_raw(Box::new(QdpPolicy {
            policy: trace.final_policy,
        }));
        Ok(QdpStatus::Ok)
    });
    result.unwrap_or_else(|status| status)
}

/// Frees a policy handle (null is a no-op).
///
/// # Safety
/// `policy` must have been returned by this library and not freed before.
#[no_mangle]
pub unsafe extern "C" fn qdp_policy_free(policy: *mut QdpPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Replaces each action pmf by a point mass on its mode (ties toward the
/// lowest price index), returning a new handle.
///
/// # Safety
/// `policy` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn qdp_policy_to_pure(policy: *const QdpPolicy) -> *mut QdpPolicy {
    if policy.is_null() {
        set_error("null handle");
        return ptr::null_mut();
    }
    Box::into_raw(Box::new(QdpPolicy {
        policy: to_pure_policy(&(*policy).policy),
    }))
}

/// The modal price index of cell `(t, z)`.
///
/// # Safety
/// `model` and `policy` must be live handles.
#[no_mangle]
pub unsafe extern "C" fn qdp_policy_action(
    policy: *const QdpPolicy,
    t: usize,
    z: usize,
    out: *mut usize,
) -> QdpStatus {
    guard(|| {
        if policy.is_null() || out.is_null() {
            set_error("null handle");
            return Err(QdpStatus::Usage);
        }
        let policy = &(*policy).policy;
        if t >= policy.horizon() || z >= policy.expert_count() {
            set_error("cell out of range");
            return Err(QdpStatus::Usage);
        }
        *out = policy.row(t, z).mode();
        Ok(QdpStatus::Ok)
    })
    .unwrap_or_else(|status| status)
}

/// Saves a policy in the structured text format.
///
/// # Safety
/// `policy` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn qdp_policy_save(
    policy: *const QdpPolicy,
    path: *const c_char,
) -> QdpStatus {
    guard(|| {
        if policy.is_null() {
            set_error("null handle");
            return Err(QdpStatus::Usage);
        }
        let path = cstr(path)?;
        save_policy(
            &PolicyTable::from_policy(&(*policy).policy),
            Path::new(path),
        )
        .map_err(|e| {
            set_error(&e.to_string());
            status_of(&e)
        })?;
        Ok(QdpStatus::Ok)
    })
    .unwrap_or_else(|status| status)
}

/// Loads a structured-text policy file against an instance.
///
/// # Safety
/// `model` must be a live handle; `path` a NUL-terminated string; `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn qdp_policy_load(
    model: *const QdpModel,
    path: *const c_char,
    out: *mut *mut QdpPolicy,
) -> QdpStatus {
    guard(|| {
        if model.is_null() || out.is_null() {
            set_error("null handle");
            return Err(QdpStatus::Usage);
        }
        let path = cstr(path)?;
        let model = &(*model).model;
        let table = load_policy(Path::new(path)).map_err(|e| {
            set_error(&e.to_string());
            status_of(&e)
        })?;
        if table.horizon != model.spec.horizon
            || table.experts != model.space.counters
            || table.actions != model.spec.action_count()
        {
            set_error("policy dimensions do not match the instance");
            return Err(QdpStatus::Usage);
        }
        let policy = table
            .into_policy(model.count_assignment(), None)
            .map_err(|e| {
                set_error(&e.to_string());
                status_of(&e)
            })?;
        *out = Box::into_raw(Box::new(QdpPolicy { policy }));
        Ok(QdpStatus::Ok)
    })
    .unwrap_or_else(|status| status)
}

/// Evaluates a policy with the deterministic forward scheme.
///
/// # Safety
/// `model` and `policy` must be live handles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qdp_eval(
    model: *const QdpModel,
    policy: *const QdpPolicy,
    out: *mut QdpValue,
) -> QdpStatus {
    guard(|| {
        if model.is_null() || policy.is_null() || out.is_null() {
            set_error("null handle");
            return Err(QdpStatus::Usage);
        }
        let model = &(*model).model;
        let engine = QplexEngine::new(model);
        let value = engine.evaluate(&(*policy).policy).map_err(|e| {
            set_error(&e.to_string());
            status_of(&e)
        })?;
        *out = QdpValue {
            total: value.total,
            revenue: value.component("revenue"),
            waiting: value.component("waiting"),
            penalty: value.component("penalty"),
            terminal_cost: value.component("terminal_cost"),
        };
        Ok(QdpStatus::Ok)
    })
    .unwrap_or_else(|status| status)
}

/// Simulates the modal (pure) projection of a policy for `reps`
/// replications with stream-keyed randomness.
///
/// # Safety
/// `model` and `policy` must be live handles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qdp_simulate(
    model: *const QdpModel,
    policy: *const QdpPolicy,
    reps: u64,
    seed: u64,
    out: *mut QdpSimSummary,
) -> QdpStatus {
    guard(|| {
        if model.is_null() || policy.is_null() || out.is_null() {
            set_error("null handle");
            return Err(QdpStatus::Usage);
        }
        let model = &(*model).model;
        let pure = qdp::policy::PurePolicy::from_policy(&(*policy).policy);
        let result = simulate_policy(model, &pure, reps, seed).map_err(|e| {
            set_error(&e.to_string());
            status_of(&e)
        })?;
        *out = QdpSimSummary {
            mean: result.mean,
            revenue: result.revenue,
            waiting: result.waiting,
            terminal: result.terminal,
            std_error: result.std_error,
            ci_halfwidth: result.ci_halfwidth,
            max_violation: result.max_violation(),
            reps: result.reps,
        };
        Ok(QdpStatus::Ok)
    })
    .unwrap_or_else(|status| status)
}

/// ABI version of this library.
#[no_mangle]
pub extern "C" fn qdp_abi_version() -> c_int {
    1
}
