//! C ABI over `cpnr-core`.
//!
//! Every function returns a [`CpnrStatus`]; on failure a message is available
//! from [`cpnr_last_error_message`] on the same thread. Models are opaque
//! handles created by `cpnr_model_from_*` and released with
//! [`cpnr_model_free`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use cpnr_core::backtest::fit_model;
use cpnr_core::engine::{cpnr, exact_first_passage, CpnrQuery};
use cpnr_core::markov::{StateSpace, TransitionModel};
use cpnr_core::optimizer::{deduce_system, min_maintenance_ratio, GridAxis, GridConfig};
use cpnr_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CpnrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidParameter = 2,
    InvalidModel = 3,
    InsufficientData = 4,
    BufferTooSmall = 5,
    Internal = 6,
}

/// Opaque fitted or user-supplied Markov chain.
pub struct CpnrModel {
    inner: TransitionModel,
}

/// One CPNR query. `h` is the zero-based current state.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CpnrParams {
    pub h: usize,
    pub p0: f64,
    pub q0: f64,
    pub delta: f64,
    pub w: f64,
    pub rate: f64,
    pub horizon: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CpnrOutput {
    pub prob_c: f64,
    pub prob_nc: f64,
    pub cpnr: f64,
}

/// Search grid in hundredths, inclusive bounds.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CpnrGrid {
    pub m_lo: u32,
    pub m_hi: u32,
    pub delta_lo: u32,
    pub delta_hi: u32,
    pub w_lo: u32,
    pub w_hi: u32,
    pub alpha: f64,
}

/// Selected margin system; `found` is 0 when the indifference set is empty.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CpnrSelection {
    pub found: u8,
    pub m: f64,
    pub delta: f64,
    pub w: f64,
    pub cpnr: f64,
    pub set_size: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let clean = message.replace('\0', " ");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = CString::new(clean).unwrap_or_default());
}

fn status_of(err: &Error) -> CpnrStatus {
    match err {
        Error::InvalidModel(_) => CpnrStatus::InvalidModel,
        Error::InsufficientData { .. } | Error::NoInput(_) => CpnrStatus::InsufficientData,
        Error::Invariant(_) => CpnrStatus::Internal,
        _ => CpnrStatus::InvalidParameter,
    }
}

fn guard(body: impl FnOnce() -> Result<(), CpnrStatus>) -> CpnrStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_last_error("");
            CpnrStatus::Ok
        }
        Ok(Err(status)) => status,
        Err(_) => {
            set_last_error("internal panic");
            CpnrStatus::Internal
        }
    }
}

fn fail(err: Error) -> CpnrStatus {
    set_last_error(&err.to_string());
    status_of(&err)
}

fn null(what: &str) -> CpnrStatus {
    set_last_error(&format!("null pointer: {what}"));
    CpnrStatus::NullPointer
}

/// # Safety
/// `p` must be null or valid for reads of `len` values.
unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], CpnrStatus> {
    if p.is_null() {
        if len == 0 {
            return Ok(&[]);
        }
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// # Safety
/// `p` must be null or point to a live value.
unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, CpnrStatus> {
    p.as_ref().ok_or_else(|| null(what))
}

fn boxed(model: TransitionModel, out: *mut *mut CpnrModel) {
    let handle = Box::into_raw(Box::new(CpnrModel { inner: model }));
    // SAFETY: caller checked `out` is non-null
    unsafe { *out = handle };
}

/// Message for the last failed call on this thread; empty after a success.
/// Valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn cpnr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cpnr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Fits a chain on `len` closes grouping every `group_size` distinct prices.
///
/// # Safety
/// `closes` must be valid for `len` reads; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cpnr_model_from_prices(
    closes: *const f64,
    len: usize,
    group_size: usize,
    out: *mut *mut CpnrModel,
) -> CpnrStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let closes = slice(closes, len, "closes")?;
        boxed(fit_model(closes, group_size).map_err(fail)?, out);
        Ok(())
    })
}

/// Builds a chain from `n` ascending representatives and a row-major `n×n`
/// row-stochastic matrix.
///
/// # Safety
/// `reps` must be valid for `n` reads, `matrix` for `n*n`; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cpnr_model_from_matrix(
    reps: *const f64,
    n: usize,
    matrix: *const f64,
    out: *mut *mut CpnrModel,
) -> CpnrStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cells = n
            .checked_mul(n)
            .ok_or_else(|| fail(Error::InvalidParameter("n too large".into())))?;
        let reps = slice(reps, n, "reps")?;
        let matrix = slice(matrix, cells, "matrix")?;
        let space = StateSpace::from_reps(reps.to_vec()).map_err(fail)?;
        let model = TransitionModel::from_row_major(space, matrix).map_err(fail)?;
        boxed(model, out);
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cpnr_model_free(model: *mut CpnrModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cpnr_model_n_states(model: *const CpnrModel, out: *mut usize) -> CpnrStatus {
    guard(|| {
        let model = deref(model, "model")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = model.inner.n_states();
        Ok(())
    })
}

/// Zero-based state containing `price`.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cpnr_model_state_of(model: *const CpnrModel, price: f64, out: *mut usize) -> CpnrStatus {
    guard(|| {
        let model = deref(model, "model")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        if !(price.is_finite() && price > 0.0) {
            return Err(fail(Error::InvalidParameter(format!("price must be positive, got {price}"))));
        }
        *out = model.inner.space().state_of(price);
        Ok(())
    })
}

/// Copies the state representatives into `out` (capacity `cap`).
///
/// # Safety
/// `model` must be a live handle; `out` valid for `cap` writes.
#[no_mangle]
pub unsafe extern "C" fn cpnr_model_reps(model: *const CpnrModel, out: *mut f64, cap: usize) -> CpnrStatus {
    guard(|| {
        let model = deref(model, "model")?;
        let reps = model.inner.space().reps();
        if cap < reps.len() {
            set_last_error(&format!("need room for {} values", reps.len()));
            return Err(CpnrStatus::BufferTooSmall);
        }
        if out.is_null() {
            return Err(null("out"));
        }
        ptr::copy_nonoverlapping(reps.as_ptr(), out, reps.len());
        Ok(())
    })
}

fn query<'a>(model: &'a CpnrModel, p: &CpnrParams) -> CpnrQuery<'a> {
    CpnrQuery {
        model: &model.inner,
        h: p.h,
        p0: p.p0,
        q0: p.q0,
        delta: p.delta,
        w: p.w,
        rate: p.rate,
        horizon: p.horizon,
    }
}

/// CPNR and its totals. `per_day_c` / `per_day_nc` may be null; when given
/// they must hold `per_day_len >= horizon` values and receive the daily terms.
///
/// # Safety
/// Pointers must be valid as described.
#[no_mangle]
pub unsafe extern "C" fn cpnr_compute(
    model: *const CpnrModel,
    params: *const CpnrParams,
    out: *mut CpnrOutput,
    per_day_c: *mut f64,
    per_day_nc: *mut f64,
    per_day_len: usize,
) -> CpnrStatus {
    guard(|| {
        let model = deref(model, "model")?;
        let params = deref(params, "params")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let wants_days = !per_day_c.is_null() || !per_day_nc.is_null();
        if wants_days && per_day_len < params.horizon {
            set_last_error(&format!("per-day buffers need {} values", params.horizon));
            return Err(CpnrStatus::BufferTooSmall);
        }
        let r = cpnr(&query(model, params)).map_err(fail)?;
        for (i, d) in r.per_day.iter().enumerate() {
            if !per_day_c.is_null() {
                *per_day_c.add(i) = d.prob_c;
            }
            if !per_day_nc.is_null() {
                *per_day_nc.add(i) = d.prob_nc;
            }
        }
        *out = CpnrOutput {
            prob_c: r.prob_c,
            prob_nc: r.prob_nc,
            cpnr: r.cpnr,
        };
        Ok(())
    })
}

/// Exact first-passage counterpart of `cpnr_compute`, for diagnostics.
///
/// # Safety
/// `model` must be a live handle, `params` readable, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cpnr_exact_first_passage(
    model: *const CpnrModel,
    params: *const CpnrParams,
    out: *mut CpnrOutput,
) -> CpnrStatus {
    guard(|| {
        let model = deref(model, "model")?;
        let params = deref(params, "params")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let e = exact_first_passage(&query(model, params)).map_err(fail)?;
        *out = CpnrOutput {
            prob_c: e.prob_c,
            prob_nc: e.prob_nc,
            cpnr: e.cpnr,
        };
        Ok(())
    })
}

/// Fills `out` with the default grid: m, δ in [0, 0.80], w in [1, 2], alpha 0.05.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cpnr_grid_default(out: *mut CpnrGrid) -> CpnrStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let g = GridConfig::default();
        *out = CpnrGrid {
            m_lo: g.m.lo,
            m_hi: g.m.hi,
            delta_lo: g.delta.lo,
            delta_hi: g.delta.hi,
            w_lo: g.w.lo,
            w_hi: g.w.hi,
            alpha: g.alpha,
        };
        Ok(())
    })
}

fn grid_of(g: &CpnrGrid) -> Result<GridConfig, CpnrStatus> {
    let grid = GridConfig {
        m: GridAxis::new(g.m_lo, g.m_hi).map_err(fail)?,
        delta: GridAxis::new(g.delta_lo, g.delta_hi).map_err(fail)?,
        w: GridAxis::new(g.w_lo, g.w_hi).map_err(fail)?,
        alpha: g.alpha,
    };
    grid.validate().map_err(fail)?;
    Ok(grid)
}

/// Deduces the least-squares margin system from the indifference set.
///
/// # Safety
/// `model` must be a live handle, `grid` readable, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cpnr_optimize(
    model: *const CpnrModel,
    h: usize,
    p0: f64,
    rate: f64,
    horizon: usize,
    grid: *const CpnrGrid,
    out: *mut CpnrSelection,
) -> CpnrStatus {
    guard(|| {
        let model = deref(model, "model")?;
        let grid = grid_of(deref(grid, "grid")?)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = match deduce_system(&model.inner, h, p0, rate, horizon, &grid).map_err(fail)? {
            None => CpnrSelection::default(),
            Some(d) => CpnrSelection {
                found: 1,
                m: d.triple.m(),
                delta: d.triple.delta(),
                w: d.triple.w(),
                cpnr: d.cpnr,
                set_size: d.set_size,
            },
        };
        Ok(())
    })
}

/// Smallest grid `w` with CPNR at or below `grid.alpha` for fixed `q0`, `delta`.
/// `found` is set to 0 when no grid point qualifies.
///
/// # Safety
/// `model` must be a live handle, `grid` readable, `out_w` and `found` writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn cpnr_min_maintenance(
    model: *const CpnrModel,
    h: usize,
    p0: f64,
    q0: f64,
    delta: f64,
    rate: f64,
    horizon: usize,
    grid: *const CpnrGrid,
    out_w: *mut f64,
    found: *mut u8,
) -> CpnrStatus {
    guard(|| {
        let model = deref(model, "model")?;
        let grid = grid_of(deref(grid, "grid")?)?;
        let out_w = out_w.as_mut().ok_or_else(|| null("out_w"))?;
        let found = found.as_mut().ok_or_else(|| null("found"))?;
        match min_maintenance_ratio(&model.inner, h, p0, q0, delta, rate, horizon, &grid).map_err(fail)? {
            Some(w) => {
                *out_w = w;
                *found = 1;
            }
            None => {
                *out_w = f64::NAN;
                *found = 0;
            }
        }
        Ok(())
    })
}
