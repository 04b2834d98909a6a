//! C ABI for the kedrl library: opaque model handles, error codes, and a
//! small evaluation surface so other languages can load a fitted embedding
//! model and read weights, embedding values and statistics from it.
//!
//! All functions return a [`KedrlStatus`]; on anything but `Ok` the caller
//! can fetch a thread-local description via [`kedrl_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use kedrl::bellman::EmbeddingModel;
use kedrl::kernel::{self, MaternParams};
use kedrl::KedrlError;

/// Status codes mirrored from the library's error taxonomy.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KedrlStatus {
    Ok = 0,
    InvalidInput = 2,
    Numerical = 3,
    Io = 4,
    NullPointer = 5,
    Panic = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let clean = msg.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(clean).unwrap_or_default();
    });
}

fn status_of(err: &KedrlError) -> KedrlStatus {
    match err.exit_code() {
        2 => KedrlStatus::InvalidInput,
        3 => KedrlStatus::Numerical,
        _ => KedrlStatus::Io,
    }
}

fn guard<F: FnOnce() -> Result<(), (KedrlStatus, String)>>(f: F) -> KedrlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => KedrlStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            KedrlStatus::Panic
        }
    }
}

fn lib_err(e: KedrlError) -> (KedrlStatus, String) {
    (status_of(&e), e.to_string())
}

/// Message describing the most recent failure on this thread. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn kedrl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static C string.
#[no_mangle]
pub extern "C" fn kedrl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Matérn kernel value at a distance.
///
/// # Safety
/// `out` must point to writable memory for one f64.
#[no_mangle]
pub unsafe extern "C" fn kedrl_matern_eval(
    nu: f64,
    length_scale: f64,
    variance: f64,
    distance: f64,
    out: *mut f64,
) -> KedrlStatus {
    guard(|| {
        if out.is_null() {
            return Err((KedrlStatus::NullPointer, "out is null".into()));
        }
        let params = MaternParams::new(nu, length_scale, variance).map_err(lib_err)?;
        let v = kernel::matern_eval(distance, &params).map_err(lib_err)?;
        unsafe { *out = v };
        Ok(())
    })
}

/// Lipschitz constant of the embedding map (requires nu > 1).
///
/// # Safety
/// `out` must point to writable memory for one f64.
#[no_mangle]
pub unsafe extern "C" fn kedrl_lipschitz_constant(
    nu: f64,
    length_scale: f64,
    variance: f64,
    out: *mut f64,
) -> KedrlStatus {
    guard(|| {
        if out.is_null() {
            return Err((KedrlStatus::NullPointer, "out is null".into()));
        }
        let params = MaternParams::new(nu, length_scale, variance).map_err(lib_err)?;
        let v = kernel::lipschitz_constant(&params).map_err(lib_err)?;
        unsafe { *out = v };
        Ok(())
    })
}

/// Opaque fitted-model handle.
pub struct KedrlModel {
    inner: EmbeddingModel,
}

/// Load a fitted model from its JSON file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable. A
/// non-null handle written to `out` must be released with
/// [`kedrl_model_free`].
#[no_mangle]
pub unsafe extern "C" fn kedrl_model_load(path: *const c_char, out: *mut *mut KedrlModel) -> KedrlStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return Err((KedrlStatus::NullPointer, "path or out is null".into()));
        }
        let path = unsafe { CStr::from_ptr(path) }
            .to_str()
            .map_err(|_| (KedrlStatus::InvalidInput, "path is not valid UTF-8".to_string()))?;
        let model = EmbeddingModel::load(Path::new(path)).map_err(lib_err)?;
        let boxed = Box::new(KedrlModel { inner: model });
        unsafe { *out = Box::into_raw(boxed) };
        Ok(())
    })
}

/// Release a model handle. Passing null is a no-op.
///
/// # Safety
/// `model` must be a pointer previously returned by [`kedrl_model_load`]
/// and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn kedrl_model_free(model: *mut KedrlModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Number of return-grid atoms (the length of the weight vector).
///
/// # Safety
/// `model` must be a live handle from [`kedrl_model_load`].
#[no_mangle]
pub unsafe extern "C" fn kedrl_model_atom_count(model: *const KedrlModel) -> usize {
    if model.is_null() {
        return 0;
    }
    unsafe { &*model }.inner.m()
}

/// Dimensions of the model: state-action input length and return dimension.
///
/// # Safety
/// All pointers must be valid; `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn kedrl_model_dims(
    model: *const KedrlModel,
    input_dim: *mut usize,
    return_dim: *mut usize,
) -> KedrlStatus {
    guard(|| {
        if model.is_null() || input_dim.is_null() || return_dim.is_null() {
            return Err((KedrlStatus::NullPointer, "null pointer argument".into()));
        }
        let m = unsafe { &*model };
        unsafe {
            *input_dim = m.inner.training_inputs.ncols();
            *return_dim = m.inner.grid_atoms.ncols();
        }
        Ok(())
    })
}

fn model_omega(model: &KedrlModel, query: &[f64]) -> Result<Vec<f64>, (KedrlStatus, String)> {
    model.inner.omega(query).map_err(lib_err)
}

/// Atom weights omega(s,a) at a query; writes `atom_count` values.
///
/// # Safety
/// `query` must point to `query_len` f64s and `out` to `atom_count`
/// writable f64s (see [`kedrl_model_atom_count`]).
#[no_mangle]
pub unsafe extern "C" fn kedrl_model_omega(
    model: *const KedrlModel,
    query: *const f64,
    query_len: usize,
    out: *mut f64,
) -> KedrlStatus {
    guard(|| {
        if model.is_null() || query.is_null() || out.is_null() {
            return Err((KedrlStatus::NullPointer, "null pointer argument".into()));
        }
        let m = unsafe { &*model };
        let q = unsafe { std::slice::from_raw_parts(query, query_len) };
        let w = model_omega(m, q)?;
        unsafe { std::ptr::copy_nonoverlapping(w.as_ptr(), out, w.len()) };
        Ok(())
    })
}

/// Fitted embedding values at return-space points (row-major
/// `n_points x return_dim`); writes `n_points` values.
///
/// # Safety
/// `query`, `points` and `out` must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn kedrl_model_embedding_values(
    model: *const KedrlModel,
    query: *const f64,
    query_len: usize,
    points: *const f64,
    n_points: usize,
    out: *mut f64,
) -> KedrlStatus {
    guard(|| {
        if model.is_null() || query.is_null() || points.is_null() || out.is_null() {
            return Err((KedrlStatus::NullPointer, "null pointer argument".into()));
        }
        let m = unsafe { &*model };
        let d = m.inner.grid_atoms.ncols();
        let q = unsafe { std::slice::from_raw_parts(query, query_len) };
        let pts = unsafe { std::slice::from_raw_parts(points, n_points * d) };
        let w = model_omega(m, q)?;
        let mat = nalgebra::DMatrix::from_fn(n_points, d, |i, j| pts[i * d + j]);
        let vals = m.inner.embedding_values(&w, &mat).map_err(lib_err)?;
        unsafe { std::ptr::copy_nonoverlapping(vals.as_ptr(), out, vals.len()) };
        Ok(())
    })
}

/// Recovered total mass sum_i omega_i at a query.
///
/// # Safety
/// `query` must point to `query_len` f64s and `out` to one writable f64.
#[no_mangle]
pub unsafe extern "C" fn kedrl_model_recovered_mass(
    model: *const KedrlModel,
    query: *const f64,
    query_len: usize,
    out: *mut f64,
) -> KedrlStatus {
    guard(|| {
        if model.is_null() || query.is_null() || out.is_null() {
            return Err((KedrlStatus::NullPointer, "null pointer argument".into()));
        }
        let m = unsafe { &*model };
        let q = unsafe { std::slice::from_raw_parts(query, query_len) };
        let w = model_omega(m, q)?;
        unsafe { *out = w.iter().sum() };
        Ok(())
    })
}
