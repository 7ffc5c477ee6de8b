//! C ABI over `guirerank`.
//!
//! Every fallible function returns a [`GrrStatus`]; on failure the message
//! is available from [`grr_last_error`] on the same thread. Strings returned
//! through out-parameters are owned by the caller and released with
//! [`grr_string_free`]. Handles are released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use guirerank::config::{default_store_path, Config};
use guirerank::engine::{Engine, EngineError, LoadedDataset};
use guirerank::eval::metrics;
use guirerank::eval::CostProjection;
use guirerank::gateway::PriceTable;
use guirerank::index::{EmbeddingIndex, IndexError};
use guirerank::rerank::{RerankMode, RerankRequest};
use guirerank::retrieval::{RetrievalError, WeightProfile};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrrStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    NotFound = 4,
    Io = 5,
    Corrupt = 6,
    Gateway = 7,
    Internal = 8,
}

/// Loaded embedding index.
pub struct GrrIndex {
    inner: EmbeddingIndex,
}

/// Datasets plus model access; runs search and rerank.
pub struct GrrEngine {
    inner: Option<Engine>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Failure(GrrStatus, String);

impl Failure {
    fn invalid(msg: impl Into<String>) -> Self {
        Failure(GrrStatus::InvalidArgument, msg.into())
    }

    fn index_status(e: &IndexError) -> GrrStatus {
        match e {
            IndexError::Io { .. } => GrrStatus::Io,
            IndexError::Gateway(_) => GrrStatus::Gateway,
            IndexError::UnknownDimension(_) | IndexError::WidthMismatch { .. } => GrrStatus::InvalidArgument,
            _ => GrrStatus::Corrupt,
        }
    }
}

impl From<IndexError> for Failure {
    fn from(e: IndexError) -> Self {
        Failure(Failure::index_status(&e), e.to_string())
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        let status = match &e {
            EngineError::UnknownDataset(_) => GrrStatus::NotFound,
            EngineError::DatasetIndex { source, .. } => Failure::index_status(source),
            EngineError::DatasetStore { .. } | EngineError::DatasetMismatch { .. } => GrrStatus::Corrupt,
            EngineError::Config(_) => GrrStatus::InvalidArgument,
            EngineError::Gateway(_) => GrrStatus::Gateway,
            EngineError::Retrieval(RetrievalError::Gateway(_)) => GrrStatus::Gateway,
            EngineError::Retrieval(_) => GrrStatus::InvalidArgument,
            EngineError::Rerank(r) => match r {
                guirerank::rerank::RerankError::ProviderDown { .. } => GrrStatus::Gateway,
                guirerank::rerank::RerankError::Retrieval(RetrievalError::Gateway(_)) => GrrStatus::Gateway,
                guirerank::rerank::RerankError::MissingAnnotation { .. }
                | guirerank::rerank::RerankError::MissingImage { .. } => GrrStatus::Corrupt,
                _ => GrrStatus::InvalidArgument,
            },
        };
        Failure(status, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> GrrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GrrStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            GrrStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(GrrStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(GrrStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

unsafe fn opt_str_arg<'a>(p: *const c_char, name: &str) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, name).map(Some)
    }
}

fn out_check<T>(p: *mut T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure(GrrStatus::NullArgument, format!("{name} is null")))
    } else {
        Ok(())
    }
}

fn to_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("nul bytes removed").into_raw()
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure(GrrStatus::NullArgument, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Message of the last failure on this thread, or NULL. Valid until the
/// next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn grr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version, static storage.
#[no_mangle]
pub extern "C" fn grr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn grr_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads an index file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn grr_index_load(path: *const c_char, out: *mut *mut GrrIndex) -> GrrStatus {
    guard(|| {
        out_check(out, "out")?;
        let path = str_arg(path, "path")?;
        let inner = EmbeddingIndex::load(Path::new(path))?;
        *out = Box::into_raw(Box::new(GrrIndex { inner }));
        Ok(())
    })
}

/// # Safety
/// `index` must come from [`grr_index_load`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn grr_index_free(index: *mut GrrIndex) {
    if !index.is_null() {
        drop(Box::from_raw(index));
    }
}

/// Number of GUIs, or 0 for NULL.
///
/// # Safety
/// `index` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn grr_index_gui_count(index: *const GrrIndex) -> usize {
    index.as_ref().map_or(0, |i| i.inner.gui_count())
}

/// Embedding width, or 0 for NULL.
///
/// # Safety
/// `index` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn grr_index_width(index: *const GrrIndex) -> usize {
    index.as_ref().map_or(0, |i| i.inner.width())
}

/// JSON description: `{dataset, model, gui_ids, dimensions, width}`.
///
/// # Safety
/// `index` must be a live handle; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn grr_index_info(index: *const GrrIndex, out_json: *mut *mut c_char) -> GrrStatus {
    guard(|| {
        out_check(out_json, "out_json")?;
        let i = &index
            .as_ref()
            .ok_or_else(|| Failure(GrrStatus::NullArgument, "index is null".into()))?
            .inner;
        let v = serde_json::json!({
            "dataset": i.dataset(),
            "model": i.model_id(),
            "gui_ids": i.gui_ids(),
            "dimensions": i.dimensions().ids(),
            "width": i.width(),
        });
        *out_json = to_c_string(v.to_string());
        Ok(())
    })
}

/// Creates an engine from a TOML config file (NULL for defaults). `stub`
/// non-zero forces the offline provider.
///
/// # Safety
/// `config_path` must be NULL or a NUL-terminated string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn grr_engine_new(config_path: *const c_char, stub: i32, out: *mut *mut GrrEngine) -> GrrStatus {
    guard(|| {
        out_check(out, "out")?;
        let mut config = match opt_str_arg(config_path, "config_path")? {
            Some(p) => Config::load(Path::new(p)).map_err(|e| Failure::invalid(e.to_string()))?,
            None => Config::default(),
        };
        if stub != 0 {
            config.stub = true;
        }
        let inner = Engine::from_config(config)?;
        *out = Box::into_raw(Box::new(GrrEngine { inner: Some(inner) }));
        Ok(())
    })
}

/// # Safety
/// `engine` must come from [`grr_engine_new`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn grr_engine_free(engine: *mut GrrEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

unsafe fn engine_mut<'a>(engine: *mut GrrEngine) -> Result<&'a mut GrrEngine, Failure> {
    engine
        .as_mut()
        .filter(|e| e.inner.is_some())
        .ok_or_else(|| Failure(GrrStatus::NullArgument, "engine is null".into()))
}

/// Registers a dataset under `name`. `store_path` NULL means
/// `<name>.annotations.jsonl` beside the index.
///
/// # Safety
/// String arguments must be NUL-terminated (store_path may be NULL).
#[no_mangle]
pub unsafe extern "C" fn grr_engine_add_dataset(
    engine: *mut GrrEngine,
    name: *const c_char,
    index_path: *const c_char,
    store_path: *const c_char,
) -> GrrStatus {
    guard(|| {
        let e = engine_mut(engine)?;
        let name = str_arg(name, "name")?;
        let index_path = Path::new(str_arg(index_path, "index_path")?);
        let store = match opt_str_arg(store_path, "store_path")? {
            Some(s) => s.into(),
            None => default_store_path(index_path, name),
        };
        let d = LoadedDataset::open(name, index_path, &store)?;
        let inner = e.inner.take().expect("checked");
        e.inner = Some(inner.with_dataset(d));
        Ok(())
    })
}

unsafe fn weights_arg(weights: *const c_char) -> Result<WeightProfile, Failure> {
    match opt_str_arg(weights, "weights")? {
        Some(w) => w.parse().map_err(|e: RetrievalError| Failure::invalid(e.to_string())),
        None => Ok(WeightProfile::new()),
    }
}

/// Stage-one search. `weights` is NULL or `"domain=1,design=2"`; `top` 0
/// returns every GUI. Writes the JSON response to `out_json`.
///
/// # Safety
/// Pointers must be valid as documented; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn grr_engine_search(
    engine: *mut GrrEngine,
    dataset: *const c_char,
    query: *const c_char,
    weights: *const c_char,
    top: usize,
    out_json: *mut *mut c_char,
) -> GrrStatus {
    guard(|| {
        out_check(out_json, "out_json")?;
        let e = engine_mut(engine)?.inner.as_ref().expect("checked");
        let out = e.search(
            str_arg(dataset, "dataset")?,
            str_arg(query, "query")?,
            &weights_arg(weights)?,
            (top > 0).then_some(top),
        )?;
        *out_json = to_c_string(serde_json::to_string(&out).map_err(|e| Failure(GrrStatus::Internal, e.to_string()))?);
        Ok(())
    })
}

/// Stage-one search plus rerank of the top `k`. `mode` is `"text"` or
/// `"image"`; `model` NULL uses the configured rerank model.
///
/// # Safety
/// Pointers must be valid as documented; `out_json` writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn grr_engine_rerank(
    engine: *mut GrrEngine,
    dataset: *const c_char,
    query: *const c_char,
    mode: *const c_char,
    k: usize,
    weights: *const c_char,
    model: *const c_char,
    out_json: *mut *mut c_char,
) -> GrrStatus {
    guard(|| {
        out_check(out_json, "out_json")?;
        let e = engine_mut(engine)?.inner.as_ref().expect("checked");
        let mode: RerankMode = str_arg(mode, "mode")?
            .parse()
            .map_err(|e: guirerank::rerank::RerankError| Failure::invalid(e.to_string()))?;
        let mut request = RerankRequest::new(str_arg(query, "query")?, mode);
        request.k = k;
        request.weights = weights_arg(weights)?;
        request.width = e.config().concurrency;
        let out = e.rerank(str_arg(dataset, "dataset")?, &request, opt_str_arg(model, "model")?)?;
        *out_json = to_c_string(serde_json::to_string(&out).map_err(|e| Failure(GrrStatus::Internal, e.to_string()))?);
        Ok(())
    })
}

/// Average precision of `rels` (non-zero = relevant, in rank order) with
/// `total_relevant` relevant items in the pool.
///
/// # Safety
/// `rels` must point to `len` bytes; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn grr_average_precision(rels: *const u8, len: usize, total_relevant: usize, out: *mut f64) -> GrrStatus {
    guard(|| {
        out_check(out, "out")?;
        let rels: Vec<bool> = slice_arg(rels, len, "rels")?.iter().map(|&b| b != 0).collect();
        *out = metrics::average_precision_rels(&rels, total_relevant).map_err(|e| Failure::invalid(e.to_string()))?;
        Ok(())
    })
}

/// # Safety
/// `rels` must point to `len` bytes; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn grr_reciprocal_rank(rels: *const u8, len: usize, out: *mut f64) -> GrrStatus {
    guard(|| {
        out_check(out, "out")?;
        let rels: Vec<bool> = slice_arg(rels, len, "rels")?.iter().map(|&b| b != 0).collect();
        *out = metrics::reciprocal_rank_rels(&rels);
        Ok(())
    })
}

/// # Safety
/// `rels` must point to `len` bytes; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn grr_precision_at(rels: *const u8, len: usize, k: usize, out: *mut f64) -> GrrStatus {
    guard(|| {
        out_check(out, "out")?;
        if k == 0 {
            return Err(Failure::invalid("k must be at least 1"));
        }
        let rels: Vec<bool> = slice_arg(rels, len, "rels")?.iter().map(|&b| b != 0).collect();
        *out = metrics::precision_at_rels(&rels, k);
        Ok(())
    })
}

/// # Safety
/// `rels` must point to `len` bytes; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn grr_hits_at(rels: *const u8, len: usize, k: usize, out: *mut f64) -> GrrStatus {
    guard(|| {
        out_check(out, "out")?;
        if k == 0 {
            return Err(Failure::invalid("k must be at least 1"));
        }
        let rels: Vec<bool> = slice_arg(rels, len, "rels")?.iter().map(|&b| b != 0).collect();
        *out = metrics::hits_at_rels(&rels, k);
        Ok(())
    })
}

/// NDCG@k of `grades` (rank order) against the ideal ordering of `pool`.
/// `exp_gain` non-zero uses 2^g - 1 instead of g.
///
/// # Safety
/// Arrays must hold the given lengths; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn grr_ndcg_at(
    grades: *const u32,
    len: usize,
    pool: *const u32,
    pool_len: usize,
    k: usize,
    exp_gain: i32,
    out: *mut f64,
) -> GrrStatus {
    guard(|| {
        out_check(out, "out")?;
        if k == 0 {
            return Err(Failure::invalid("k must be at least 1"));
        }
        let gain = if exp_gain != 0 {
            metrics::NdcgGain::Exp
        } else {
            metrics::NdcgGain::Linear
        };
        *out = metrics::ndcg_at_grades(slice_arg(grades, len, "grades")?, slice_arg(pool, pool_len, "pool")?, k, gain);
        Ok(())
    })
}

/// Dollar cost of reranking `k` GUIs given per-GUI mean token counts,
/// priced with the built-in table.
///
/// # Safety
/// `model` must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn grr_project_cost(
    model: *const c_char,
    input_per_gui: f64,
    output_per_gui: f64,
    k: usize,
    out: *mut f64,
) -> GrrStatus {
    guard(|| {
        out_check(out, "out")?;
        let model = str_arg(model, "model")?;
        let p = CostProjection::from_means(model, input_per_gui, output_per_gui, None, &PriceTable::builtin())
            .map_err(|e| Failure(GrrStatus::NotFound, e.to_string()))?;
        let per_gui = p.cost_at(100).expect("k=100 is projected") / 100.0;
        *out = per_gui * k as f64;
        Ok(())
    })
}
