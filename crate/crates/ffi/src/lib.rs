//! C ABI for mixopt.
//!
//! Every function returns a `MixoptStatus`; on failure the message is
//! available from `mixopt_last_error()` on the same thread. Handles are
//! opaque and freed with their `_free` function; strings returned through
//! `out` parameters are freed with `mixopt_string_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use chrono::Utc;

use mixopt::campaign::{ingest_path, Constraints, Store};
use mixopt::moo::{hypervolume, pareto_indices};
use mixopt::strength::{
    fit_strength_model, observed_bounds, IngredientId, Mixture, StrengthModel, StrengthModelConfig,
    StrengthObservation, NUM_INGREDIENTS,
};
use mixopt::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MixoptStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Shape = 3,
    Validation = 4,
    Conditioning = 5,
    Fitting = 6,
    InsufficientData = 7,
    Config = 8,
    Infeasible = 9,
    Schema = 10,
    Row = 11,
    Migration = 12,
    Integrity = 13,
    NotFound = 14,
    Io = 15,
    Json = 16,
    Csv = 17,
    Panic = 99,
}

impl From<&Error> for MixoptStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Shape(_) => Self::Shape,
            Error::Validation(_) => Self::Validation,
            Error::Conditioning { .. } => Self::Conditioning,
            Error::Fitting(_) => Self::Fitting,
            Error::InsufficientData(_) => Self::InsufficientData,
            Error::Config(_) => Self::Config,
            Error::Infeasible { .. } => Self::Infeasible,
            Error::Schema(_) => Self::Schema,
            Error::Row { .. } => Self::Row,
            Error::Migration { .. } => Self::Migration,
            Error::Integrity { .. } => Self::Integrity,
            Error::NotFound(_) => Self::NotFound,
            Error::Io { .. } => Self::Io,
            Error::Json(_) => Self::Json,
            Error::Csv(_) => Self::Csv,
        }
    }
}

/// Fitted strength model.
pub struct MixoptModel {
    inner: StrengthModel,
}

/// Campaign store rooted at a directory.
pub struct MixoptStore {
    inner: Store,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

enum Failure {
    Null(&'static str),
    Utf8(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Lib(Error::Json(e))
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MixoptStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            MixoptStatus::Ok
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("{what} is null"));
            MixoptStatus::NullPointer
        }
        Ok(Err(Failure::Utf8(what))) => {
            set_error(format!("{what} is not valid UTF-8"));
            MixoptStatus::InvalidUtf8
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(format!("{}: {e}", e.code()));
            MixoptStatus::from(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            MixoptStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure::Utf8(what))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write_string(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null("out"));
    }
    *out = CString::new(s)
        .map_err(|_| Failure::Lib(Error::Validation("string contains NUL".into())))?
        .into_raw();
    Ok(())
}

fn rows(points: &[f64], n: usize, m: usize) -> Result<Vec<Vec<f64>>, Failure> {
    if points.len() != n * m {
        return Err(Error::Shape(format!("expected {} values, got {}", n * m, points.len())).into());
    }
    Ok(points.chunks(m.max(1)).take(n).map(<[f64]>::to_vec).collect())
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn mixopt_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn mixopt_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

#[no_mangle]
pub extern "C" fn mixopt_ingredient_count() -> usize {
    NUM_INGREDIENTS
}

/// Static name of ingredient `i` in quantity-array order, or NULL.
#[no_mangle]
pub extern "C" fn mixopt_ingredient_name(i: usize) -> *const c_char {
    const NAMES: [&CStr; NUM_INGREDIENTS] = [
        c"cement",
        c"fly_ash",
        c"slag",
        c"water",
        c"fine_aggregate",
        c"coarse_aggregate",
        c"superplasticizer",
    ];
    debug_assert!(IngredientId::ALL
        .iter()
        .zip(NAMES)
        .all(|(id, n)| n.to_str() == Ok(id.name())));
    NAMES.get(i).map_or(ptr::null(), |n| n.as_ptr())
}

/// Hypervolume of `n` points with `m` objectives (row-major, maximized)
/// above `reference`.
///
/// # Safety
/// `points` holds `n * m` doubles, `reference` holds `m`, `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn mixopt_hypervolume(
    points: *const f64,
    n: usize,
    m: usize,
    reference: *const f64,
    out: *mut f64,
) -> MixoptStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let pts = rows(slice_arg(points, n * m, "points")?, n, m)?;
        let r = slice_arg(reference, m, "reference")?;
        *out = hypervolume(&pts, r)?;
        Ok(())
    })
}

/// Indices of the non-dominated rows. `out_indices` needs room for `n`
/// entries; `out_len` receives the count.
///
/// # Safety
/// `points` holds `n * m` doubles; `out_indices` has room for `n` entries.
#[no_mangle]
pub unsafe extern "C" fn mixopt_pareto_filter(
    points: *const f64,
    n: usize,
    m: usize,
    out_indices: *mut usize,
    out_len: *mut usize,
) -> MixoptStatus {
    guard(|| {
        if out_len.is_null() || (n > 0 && out_indices.is_null()) {
            return Err(Failure::Null("output"));
        }
        let pts = rows(slice_arg(points, n * m, "points")?, n, m)?;
        let idx = pareto_indices(&pts)?;
        for (k, i) in idx.iter().enumerate() {
            *out_indices.add(k) = *i;
        }
        *out_len = idx.len();
        Ok(())
    })
}

/// Fits a strength model. `observations_json` is a JSON array of
/// observations; `constraints_json` may be NULL, in which case the design
/// space spans the observed quantities.
///
/// # Safety
/// String arguments are NUL-terminated; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn mixopt_model_fit(
    observations_json: *const c_char,
    constraints_json: *const c_char,
    out: *mut *mut MixoptModel,
) -> MixoptStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let obs: Vec<StrengthObservation> = serde_json::from_str(str_arg(observations_json, "observations_json")?)?;
        let constraints: Constraints = if constraints_json.is_null() {
            observed_bounds(&obs)
        } else {
            serde_json::from_str(str_arg(constraints_json, "constraints_json")?)?
        };
        let model = fit_strength_model(&obs, &constraints, &StrengthModelConfig::default())?;
        *out = Box::into_raw(Box::new(MixoptModel { inner: model }));
        Ok(())
    })
}

/// Restores a model from its JSON snapshot.
///
/// # Safety
/// `json` is NUL-terminated; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn mixopt_model_from_json(json: *const c_char, out: *mut *mut MixoptModel) -> MixoptStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let model: StrengthModel = serde_json::from_str(str_arg(json, "json")?)?;
        *out = Box::into_raw(Box::new(MixoptModel { inner: model }));
        Ok(())
    })
}

/// # Safety
/// `model` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn mixopt_model_to_json(model: *const MixoptModel, out: *mut *mut c_char) -> MixoptStatus {
    guard(|| {
        let model = model.as_ref().ok_or(Failure::Null("model"))?;
        write_string(out, serde_json::to_string(&model.inner)?)
    })
}

/// Posterior strength mean and sd (MPa) at each age for one mixture given
/// as `mixopt_ingredient_count()` quantities in kg/m³.
///
/// # Safety
/// `quantities` holds the ingredient count; `ages`, `out_mean` and `out_sd`
/// hold `n_ages` doubles each.
#[no_mangle]
pub unsafe extern "C" fn mixopt_model_predict(
    model: *const MixoptModel,
    quantities: *const f64,
    ages: *const f64,
    n_ages: usize,
    out_mean: *mut f64,
    out_sd: *mut f64,
) -> MixoptStatus {
    guard(|| {
        let model = model.as_ref().ok_or(Failure::Null("model"))?;
        if n_ages > 0 && (out_mean.is_null() || out_sd.is_null()) {
            return Err(Failure::Null("output"));
        }
        let q: [f64; NUM_INGREDIENTS] = slice_arg(quantities, NUM_INGREDIENTS, "quantities")?
            .try_into()
            .expect("length checked");
        let mixture = Mixture::new(q)?;
        let preds = model.inner.predict(&mixture, slice_arg(ages, n_ages, "ages")?)?;
        for (i, p) in preds.iter().enumerate() {
            *out_mean.add(i) = p.mean_mpa;
            *out_sd.add(i) = p.sd_mpa;
        }
        Ok(())
    })
}

/// # Safety
/// `model` is NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mixopt_model_free(model: *mut MixoptModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Opens (creating if needed) a campaign store directory.
///
/// # Safety
/// `path` is NUL-terminated; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn mixopt_store_open(path: *const c_char, out: *mut *mut MixoptStore) -> MixoptStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let store = Store::open(str_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(MixoptStore { inner: store }));
        Ok(())
    })
}

/// # Safety
/// `store` is NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mixopt_store_free(store: *mut MixoptStore) {
    if !store.is_null() {
        drop(Box::from_raw(store));
    }
}

/// Campaign summary as JSON.
///
/// # Safety
/// `store` is a live handle, `campaign` NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mixopt_campaign_state(
    store: *const MixoptStore,
    campaign: *const c_char,
    out: *mut *mut c_char,
) -> MixoptStatus {
    guard(|| {
        let store = store.as_ref().ok_or(Failure::Null("store"))?;
        let c = store.inner.load(str_arg(campaign, "campaign")?)?;
        write_string(out, serde_json::to_string(&c.summary()?)?)
    })
}

/// Appends a measurement CSV; writes the ingest report as JSON.
///
/// # Safety
/// `store` is a live handle, strings NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mixopt_ingest_csv(
    store: *const MixoptStore,
    campaign: *const c_char,
    csv_path: *const c_char,
    strict: bool,
    out: *mut *mut c_char,
) -> MixoptStatus {
    guard(|| {
        let store = store.as_ref().ok_or(Failure::Null("store"))?;
        let id = str_arg(campaign, "campaign")?;
        if !store.inner.exists(id) {
            return Err(Error::NotFound(id.to_string()).into());
        }
        let (rows, report) = ingest_path(std::path::Path::new(str_arg(csv_path, "csv_path")?), strict)?;
        store.inner.append(id, &rows)?;
        write_string(out, serde_json::to_string(&report)?)
    })
}

/// Fits, proposes and records a batch of `q` mixtures; writes the batch as JSON.
///
/// # Safety
/// `store` is a live handle, `campaign` NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mixopt_propose(
    store: *const MixoptStore,
    campaign: *const c_char,
    q: usize,
    seed: u64,
    out: *mut *mut c_char,
) -> MixoptStatus {
    guard(|| {
        let store = store.as_ref().ok_or(Failure::Null("store"))?;
        let id = str_arg(campaign, "campaign")?;
        let c = store.inner.load(id)?;
        let mut proposal = c.plan_batch(q, seed, Utc::now())?;
        store.inner.save_snapshot(id, &proposal.model)?;
        store
            .inner
            .update(id, |c, _| c.commit_proposal(&mut proposal, Utc::now()))?;
        write_string(out, serde_json::to_string(&proposal.batch)?)
    })
}
