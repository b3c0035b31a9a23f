//! C ABI over `nst-core`.
//!
//! Models live behind an opaque [`NstModel`] handle. Every function returns an
//! [`NstStatus`]; on failure the message is available from
//! [`nst_last_error`] on the same thread. Strings handed out by the library
//! must be released with [`nst_string_free`]. Pointer arguments must be null
//! or valid for the lengths passed alongside them.
#![allow(clippy::missing_safety_doc)]

use nst_core::calibrate::{calibrate, CalibConfig, LossSpec};
use nst_core::dsl::{parse_model, print_model, validate_model, SdeModel};
use nst_core::engine::{generate_noise, moments, simulate, Grid};
use nst_core::market::{step_price, DemandComponents};
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NstStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    ParseError = 3,
    InvalidModel = 4,
    InvalidArgument = 5,
    EngineError = 6,
    CalibrationError = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

/// Opaque parsed model.
pub struct NstModel {
    inner: SdeModel,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn fail(status: NstStatus, msg: impl Into<String>) -> NstStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> NstStatus) -> NstStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => {
            if s == NstStatus::Ok {
                set_error("");
            }
            s
        }
        Err(_) => fail(NstStatus::Panic, "internal panic"),
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize) -> Option<&'a [f64]> {
    if len == 0 {
        Some(&[])
    } else if p.is_null() {
        None
    } else {
        Some(std::slice::from_raw_parts(p, len))
    }
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize) -> Option<&'a mut [f64]> {
    if len == 0 {
        Some(&mut [])
    } else if p.is_null() {
        None
    } else {
        Some(std::slice::from_raw_parts_mut(p, len))
    }
}

fn give_string(s: String, out: *mut *mut c_char) -> NstStatus {
    match CString::new(s) {
        Ok(c) => {
            unsafe { *out = c.into_raw() };
            NstStatus::Ok
        }
        Err(_) => fail(NstStatus::InvalidUtf8, "string contains NUL"),
    }
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next library call on this thread.
#[no_mangle]
pub extern "C" fn nst_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

#[no_mangle]
pub unsafe extern "C" fn nst_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses model source text into a new handle stored in `*out`.
#[no_mangle]
pub unsafe extern "C" fn nst_model_parse(source: *const c_char, out: *mut *mut NstModel) -> NstStatus {
    guard(|| {
        if source.is_null() || out.is_null() {
            return fail(NstStatus::NullPointer, "null argument");
        }
        let Ok(text) = CStr::from_ptr(source).to_str() else {
            return fail(NstStatus::InvalidUtf8, "source is not UTF-8");
        };
        match parse_model(text) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(NstModel { inner }));
                NstStatus::Ok
            }
            Err(e) => fail(NstStatus::ParseError, e.to_string()),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn nst_model_free(model: *mut NstModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Canonical source text of the model.
#[no_mangle]
pub unsafe extern "C" fn nst_model_print(model: *const NstModel, out: *mut *mut c_char) -> NstStatus {
    guard(|| {
        if model.is_null() || out.is_null() {
            return fail(NstStatus::NullPointer, "null argument");
        }
        give_string(print_model(&(*model).inner), out)
    })
}

/// Sets `*ok` to 1 when the model has no validation errors, else 0, and
/// stores the report as JSON in `*report_json` when that pointer is non-null.
#[no_mangle]
pub unsafe extern "C" fn nst_model_validate(
    model: *const NstModel,
    ok: *mut i32,
    report_json: *mut *mut c_char,
) -> NstStatus {
    guard(|| {
        if model.is_null() || ok.is_null() {
            return fail(NstStatus::NullPointer, "null argument");
        }
        let report = validate_model(&(*model).inner);
        *ok = report.ok as i32;
        if report_json.is_null() {
            return NstStatus::Ok;
        }
        give_string(serde_json::to_string(&report).unwrap_or_default(), report_json)
    })
}

#[no_mangle]
pub unsafe extern "C" fn nst_model_param_count(model: *const NstModel, out: *mut usize) -> NstStatus {
    guard(|| {
        if model.is_null() || out.is_null() {
            return fail(NstStatus::NullPointer, "null argument");
        }
        *out = (*model).inner.params.len();
        NstStatus::Ok
    })
}

/// Copies the model's parameter values into `out[0..len]`.
#[no_mangle]
pub unsafe extern "C" fn nst_model_params(model: *const NstModel, out: *mut f64, len: usize) -> NstStatus {
    guard(|| {
        if model.is_null() {
            return fail(NstStatus::NullPointer, "null model");
        }
        let values = (*model).inner.param_values();
        if len < values.len() {
            return fail(NstStatus::BufferTooSmall, format!("need {} slots", values.len()));
        }
        let Some(out) = slice_mut(out, values.len()) else {
            return fail(NstStatus::NullPointer, "null output");
        };
        out.copy_from_slice(&values);
        NstStatus::Ok
    })
}

/// Simulates `n_paths` paths of the value state over `n_steps` steps of
/// size `dt` from `x0`. `params` may be null to use the model's own values.
/// Writes `n_paths * (n_steps + 1)` values path-major into `out_values` and,
/// if non-null, one divergence flag per path into `out_diverged`.
#[no_mangle]
pub unsafe extern "C" fn nst_simulate(
    model: *const NstModel,
    params: *const f64,
    n_params: usize,
    x0: f64,
    dt: f64,
    n_steps: usize,
    n_paths: usize,
    seed: u64,
    out_values: *mut f64,
    out_len: usize,
    out_diverged: *mut u8,
) -> NstStatus {
    guard(|| {
        if model.is_null() {
            return fail(NstStatus::NullPointer, "null model");
        }
        let model = &(*model).inner;
        let theta = if params.is_null() {
            model.param_values()
        } else {
            match slice(params, n_params) {
                Some(p) => p.to_vec(),
                None => return fail(NstStatus::NullPointer, "null params"),
            }
        };
        if n_paths == 0 {
            return fail(NstStatus::InvalidArgument, "n_paths must be positive");
        }
        let grid = match Grid::new(0.0, n_steps, dt) {
            Ok(g) => g,
            Err(e) => return fail(NstStatus::InvalidArgument, e.to_string()),
        };
        let need = n_paths * (n_steps + 1);
        if out_len < need {
            return fail(NstStatus::BufferTooSmall, format!("need {need} slots"));
        }
        let Some(out) = slice_mut(out_values, need) else {
            return fail(NstStatus::NullPointer, "null output");
        };
        let noise = generate_noise(seed, n_paths, &grid, model.n_drivers());
        let ens = match simulate(model, &theta, x0, &grid, &noise) {
            Ok(e) => e,
            Err(e) => return fail(NstStatus::EngineError, e.to_string()),
        };
        for (chunk, path) in out.chunks_mut(n_steps + 1).zip(&ens.values) {
            chunk.copy_from_slice(path);
        }
        if !out_diverged.is_null() {
            let flags = std::slice::from_raw_parts_mut(out_diverged, n_paths);
            for (f, d) in flags.iter_mut().zip(&ens.diverged) {
                *f = *d as u8;
            }
        }
        NstStatus::Ok
    })
}

/// Mean, standard deviation, skewness and kurtosis of `series` into `out[0..4]`.
#[no_mangle]
pub unsafe extern "C" fn nst_moments(series: *const f64, len: usize, out: *mut f64) -> NstStatus {
    guard(|| {
        let (Some(series), Some(out)) = (slice(series, len), slice_mut(out, 4)) else {
            return fail(NstStatus::NullPointer, "null argument");
        };
        match moments(series) {
            Ok(m) => {
                out.copy_from_slice(&m.to_array());
                NstStatus::Ok
            }
            Err(e) => fail(NstStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Calibrates the model to `series` with default settings apart from
/// `epochs` and `seed`. Writes the best parameters into `out_theta` and the
/// unweighted moment MAE into `*out_mae` (if non-null).
#[no_mangle]
pub unsafe extern "C" fn nst_calibrate(
    model: *const NstModel,
    series: *const f64,
    len: usize,
    epochs: usize,
    seed: u64,
    out_theta: *mut f64,
    theta_len: usize,
    out_mae: *mut f64,
) -> NstStatus {
    guard(|| {
        if model.is_null() {
            return fail(NstStatus::NullPointer, "null model");
        }
        let model = &(*model).inner;
        let Some(series) = slice(series, len) else {
            return fail(NstStatus::NullPointer, "null series");
        };
        let n = model.params.len();
        if theta_len < n {
            return fail(NstStatus::BufferTooSmall, format!("need {n} slots"));
        }
        let Some(theta) = slice_mut(out_theta, n) else {
            return fail(NstStatus::NullPointer, "null output");
        };
        let config = CalibConfig {
            epochs,
            seed,
            ..CalibConfig::default()
        };
        match calibrate(model, series, &config, &LossSpec::default()) {
            Ok(r) => {
                theta.copy_from_slice(&r.theta);
                if !out_mae.is_null() {
                    *out_mae = r.mae;
                }
                NstStatus::Ok
            }
            Err(e) => fail(NstStatus::CalibrationError, e.to_string()),
        }
    })
}

/// One price-impact step: `p + lambda * (sum(fundamental) * dt + noise)`.
#[no_mangle]
pub unsafe extern "C" fn nst_step_price(
    p: f64,
    fundamental: *const f64,
    n: usize,
    noise: f64,
    lambda: f64,
    dt: f64,
    out: *mut f64,
) -> NstStatus {
    guard(|| {
        let Some(f) = slice(fundamental, n) else {
            return fail(NstStatus::NullPointer, "null demands");
        };
        if out.is_null() {
            return fail(NstStatus::NullPointer, "null output");
        }
        *out = step_price(p, &DemandComponents::new(f.to_vec(), noise), lambda, dt);
        NstStatus::Ok
    })
}
