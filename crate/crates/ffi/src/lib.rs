//! C ABI over the trained feedback model: load a model file, query controls,
//! free the handle. Errors come back as status codes with a thread-local
//! message for diagnostics, so the surface stays usable from any language
//! with a C FFI.

use mecp::mlp::{infer, model_from_json, read_model, MlpModel};
use nalgebra::DVector;
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;

/// Opaque handle to a loaded feedback model.
pub struct MecpModel {
    inner: MlpModel,
}

/// Status of an FFI call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MecpStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    IoError = 3,
    ParseError = 4,
    DimensionMismatch = 5,
    NonFiniteInput = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

/// Message describing the most recent failure on this thread. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mecp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Crate version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mecp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

fn wrap_model(model: MlpModel, out: *mut *mut MecpModel) -> MecpStatus {
    let handle = Box::new(MecpModel { inner: model });
    // SAFETY: `out` was checked non-null by the callers.
    unsafe { *out = Box::into_raw(handle) };
    MecpStatus::Ok
}

/// Loads a model from a JSON file.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid location
/// for one pointer. On success `*out` owns the model and must be released
/// with [`mecp_model_free`].
#[no_mangle]
pub unsafe extern "C" fn mecp_model_load(
    path: *const c_char,
    out: *mut *mut MecpModel,
) -> MecpStatus {
    if path.is_null() || out.is_null() {
        set_error("null argument");
        return MecpStatus::NullArgument;
    }
    let Ok(path) = CStr::from_ptr(path).to_str() else {
        set_error("path is not valid UTF-8");
        return MecpStatus::InvalidUtf8;
    };
    match read_model(Path::new(path)) {
        Ok(model) => wrap_model(model, out),
        Err(e @ mecp::Error::Io(_)) => {
            set_error(&e.to_string());
            MecpStatus::IoError
        }
        Err(e) => {
            set_error(&e.to_string());
            MecpStatus::ParseError
        }
    }
}

/// Parses a model from an in-memory JSON document.
///
/// # Safety
/// `json` must be a valid NUL-terminated string and `out` a valid location
/// for one pointer; see [`mecp_model_load`].
#[no_mangle]
pub unsafe extern "C" fn mecp_model_from_json(
    json: *const c_char,
    out: *mut *mut MecpModel,
) -> MecpStatus {
    if json.is_null() || out.is_null() {
        set_error("null argument");
        return MecpStatus::NullArgument;
    }
    let Ok(json) = CStr::from_ptr(json).to_str() else {
        set_error("json is not valid UTF-8");
        return MecpStatus::InvalidUtf8;
    };
    match model_from_json(json) {
        Ok(model) => wrap_model(model, out),
        Err(e) => {
            set_error(&e.to_string());
            MecpStatus::ParseError
        }
    }
}

/// Releases a model handle. A null pointer is a no-op.
///
/// # Safety
/// `model` must have been produced by a load call and not freed before.
#[no_mangle]
pub unsafe extern "C" fn mecp_model_free(model: *mut MecpModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// State dimension expected by [`mecp_infer`], or -1 on a null handle.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn mecp_model_state_dim(model: *const MecpModel) -> i32 {
    if model.is_null() {
        return -1;
    }
    ((*model).inner.input_dim() - 1) as i32
}

/// Control dimension written by [`mecp_infer`], or -1 on a null handle.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn mecp_model_control_dim(model: *const MecpModel) -> i32 {
    if model.is_null() {
        return -1;
    }
    (*model).inner.output_dim() as i32
}

/// Evaluates the feedback control for `(t_g, state)` into `control_out`.
///
/// # Safety
/// `state` must point to `state_len` readable doubles and `control_out` to
/// `control_len` writable doubles; `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mecp_infer(
    model: *const MecpModel,
    t_g: f64,
    state: *const f64,
    state_len: usize,
    control_out: *mut f64,
    control_len: usize,
) -> MecpStatus {
    if model.is_null() || state.is_null() || control_out.is_null() {
        set_error("null argument");
        return MecpStatus::NullArgument;
    }
    let model = &(*model).inner;
    if state_len + 1 != model.input_dim() || control_len != model.output_dim() {
        set_error("state/control buffer lengths do not match the model");
        return MecpStatus::DimensionMismatch;
    }
    let x = DVector::from_column_slice(std::slice::from_raw_parts(state, state_len));
    match infer(model, t_g, &x) {
        Ok(u) => {
            std::ptr::copy_nonoverlapping(u.as_ptr(), control_out, control_len);
            MecpStatus::Ok
        }
        Err(e) => {
            set_error(&e.to_string());
            MecpStatus::NonFiniteInput
        }
    }
}
