//! C ABI over the tgrag engine: opaque handles, status codes, and
//! JSON-out-parameter calls so any language with a C FFI can load an index
//! snapshot, query it, and merge updates.
//!
//! Strings returned through out-parameters are UTF-8, NUL-terminated, and
//! owned by the caller; release them with `tgrag_string_free`. Error
//! details for the most recent failing call on the current thread come
//! from `tgrag_last_error`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::AssertUnwindSafe;
use std::path::{Path, PathBuf};

use tgrag::config::{AppConfig, Providers};
use tgrag::engine::Engine;
use tgrag::error::Error;
use tgrag::prompts::TemplateSet;

/// Result of an FFI call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TgragStatus {
    Ok = 0,
    /// Bad input: null pointer, invalid UTF-8, unknown mode, bad config.
    InvalidArgument = 1,
    Io = 2,
    /// Snapshot missing, truncated, or from an unsupported version.
    CorruptSnapshot = 3,
    /// LLM or embedding provider failure.
    Provider = 4,
    Internal = 5,
}

/// Opaque engine handle.
pub struct TgragEngine {
    engine: Engine,
    index_dir: PathBuf,
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

fn status_of(err: &Error) -> TgragStatus {
    match err {
        Error::InvalidArgument(_)
        | Error::MalformedTimestamp(_)
        | Error::InvalidDate(_)
        | Error::EmptyCorpus
        | Error::EmptyDocument(_)
        | Error::Config(_) => TgragStatus::InvalidArgument,
        Error::Io(_) => TgragStatus::Io,
        Error::CorruptSnapshot(_) | Error::Version { .. } => TgragStatus::CorruptSnapshot,
        Error::Provider { .. } => TgragStatus::Provider,
        _ => TgragStatus::Internal,
    }
}

fn fail(err: Error) -> TgragStatus {
    let status = status_of(&err);
    set_error(&err.to_string());
    status
}

/// # Safety
/// `ptr` must be null or a valid NUL-terminated string.
unsafe fn opt_str<'a>(ptr: *const c_char) -> Result<Option<&'a str>, TgragStatus> {
    if ptr.is_null() {
        return Ok(None);
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(Some(s)),
        Err(_) => {
            set_error("argument is not valid UTF-8");
            Err(TgragStatus::InvalidArgument)
        }
    }
}

/// # Safety
/// `ptr` must be a valid NUL-terminated string (not null).
unsafe fn req_str<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, TgragStatus> {
    match opt_str(ptr)? {
        Some(s) => Ok(s),
        None => {
            set_error(&format!("{name} must not be null"));
            Err(TgragStatus::InvalidArgument)
        }
    }
}

fn emit_string(out: *mut *mut c_char, text: String) -> TgragStatus {
    if out.is_null() {
        set_error("output pointer must not be null");
        return TgragStatus::InvalidArgument;
    }
    match CString::new(text.replace('\0', " ")) {
        Ok(s) => {
            unsafe { *out = s.into_raw() };
            TgragStatus::Ok
        }
        Err(_) => {
            set_error("output contained an interior NUL");
            TgragStatus::Internal
        }
    }
}

fn guarded(f: impl FnOnce() -> TgragStatus) -> TgragStatus {
    match std::panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("panic across FFI boundary");
            TgragStatus::Internal
        }
    }
}

/// Message of the most recent failing call on this thread. The pointer is
/// valid until the next failing call on the same thread; never free it.
#[no_mangle]
pub extern "C" fn tgrag_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Free a string returned by this library. Null is a no-op.
///
/// # Safety
/// `s` must be a pointer previously handed out by a `tgrag_*` call and not
/// yet freed.
#[no_mangle]
pub unsafe extern "C" fn tgrag_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Open an index snapshot. `config_path` may be null, in which case the
/// defaults apply (mock providers unless `TGRAG_LLM_ENDPOINT` is set).
/// On success `*out` owns the engine; release it with `tgrag_engine_close`.
///
/// # Safety
/// `index_dir` must be a valid NUL-terminated string; `config_path` must be
/// null or valid; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tgrag_engine_open(
    index_dir: *const c_char,
    config_path: *const c_char,
    out: *mut *mut TgragEngine,
) -> TgragStatus {
    guarded(|| {
        if out.is_null() {
            set_error("out must not be null");
            return TgragStatus::InvalidArgument;
        }
        let dir = match req_str(index_dir, "index_dir") {
            Ok(s) => s,
            Err(status) => return status,
        };
        let config = match opt_str(config_path) {
            Ok(c) => c,
            Err(status) => return status,
        };
        let app = match config {
            Some(path) => match AppConfig::load(Path::new(path)) {
                Ok(app) => app,
                Err(e) => return fail(e),
            },
            None => AppConfig::default(),
        };
        let templates = match &app.templates_dir {
            Some(dir) => match TemplateSet::with_overrides(dir) {
                Ok(t) => t,
                Err(e) => return fail(e),
            },
            None => TemplateSet::builtin(),
        };
        let providers = match Providers::from_config(&app.providers, app.engine.retry) {
            Ok(p) => p,
            Err(e) => return fail(e),
        };
        match Engine::load(Path::new(dir), app.engine, providers, templates) {
            Ok(engine) => {
                let handle = Box::new(TgragEngine {
                    engine,
                    index_dir: PathBuf::from(dir),
                });
                *out = Box::into_raw(handle);
                TgragStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Close an engine handle. Null is a no-op.
///
/// # Safety
/// `engine` must come from `tgrag_engine_open` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tgrag_engine_close(engine: *mut TgragEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Answer a question. `mode` is `"local"` or `"global"`; `scoring_mode` may
/// be null for the configured default. On success `*out_json` holds the
/// full answer record as JSON.
///
/// # Safety
/// `engine` must be a live handle; string arguments as documented; out
/// pointer valid.
#[no_mangle]
pub unsafe extern "C" fn tgrag_query(
    engine: *const TgragEngine,
    question: *const c_char,
    mode: *const c_char,
    scoring_mode: *const c_char,
    out_json: *mut *mut c_char,
) -> TgragStatus {
    guarded(|| {
        let Some(handle) = engine.as_ref() else {
            set_error("engine must not be null");
            return TgragStatus::InvalidArgument;
        };
        let question = match req_str(question, "question") {
            Ok(s) => s,
            Err(status) => return status,
        };
        let mode = match req_str(mode, "mode") {
            Ok(s) => s,
            Err(status) => return status,
        };
        let override_mode = match opt_str(scoring_mode) {
            Ok(Some(s)) => match s.parse() {
                Ok(m) => Some(m),
                Err(e) => return fail(e),
            },
            Ok(None) => None,
            Err(status) => return status,
        };
        let record = match mode {
            "local" => handle.engine.answer_local(question, override_mode),
            "global" => handle.engine.answer_global(question, override_mode),
            other => {
                set_error(&format!("mode must be local or global, got {other:?}"));
                return TgragStatus::InvalidArgument;
            }
        };
        match record {
            Ok(record) => match serde_json::to_string(&record) {
                Ok(json) => emit_string(out_json, json),
                Err(e) => {
                    set_error(&e.to_string());
                    TgragStatus::Internal
                }
            },
            Err(e) => fail(e),
        }
    })
}

/// Index statistics as JSON.
///
/// # Safety
/// `engine` must be a live handle; `out_json` valid.
#[no_mangle]
pub unsafe extern "C" fn tgrag_stats(
    engine: *const TgragEngine,
    out_json: *mut *mut c_char,
) -> TgragStatus {
    guarded(|| {
        let Some(handle) = engine.as_ref() else {
            set_error("engine must not be null");
            return TgragStatus::InvalidArgument;
        };
        match serde_json::to_string(&handle.engine.stats()) {
            Ok(json) => emit_string(out_json, json),
            Err(e) => {
                set_error(&e.to_string());
                TgragStatus::Internal
            }
        }
    })
}

/// The report text for one time node (e.g. `"2023-Q2"`), as JSON.
///
/// # Safety
/// `engine` must be a live handle; `timestamp` a valid string; `out_json`
/// valid.
#[no_mangle]
pub unsafe extern "C" fn tgrag_time_report(
    engine: *const TgragEngine,
    timestamp: *const c_char,
    out_json: *mut *mut c_char,
) -> TgragStatus {
    guarded(|| {
        let Some(handle) = engine.as_ref() else {
            set_error("engine must not be null");
            return TgragStatus::InvalidArgument;
        };
        let raw = match req_str(timestamp, "timestamp") {
            Ok(s) => s,
            Err(status) => return status,
        };
        let ts = match tgrag::time::parse_timestamp(raw) {
            Ok(ts) => ts,
            Err(e) => return fail(e),
        };
        match handle.engine.state.reports.get(&ts) {
            Some(report) => match serde_json::to_string(report) {
                Ok(json) => emit_string(out_json, json),
                Err(e) => {
                    set_error(&e.to_string());
                    TgragStatus::Internal
                }
            },
            None => fail(Error::MissingReport(ts.to_string())),
        }
    })
}

/// Merge a directory of new documents into the index, persist the updated
/// snapshot, and return the update summary as JSON.
///
/// # Safety
/// `engine` must be a live, exclusively-held handle; `docs_dir` a valid
/// string; `out_json` valid.
#[no_mangle]
pub unsafe extern "C" fn tgrag_update_dir(
    engine: *mut TgragEngine,
    docs_dir: *const c_char,
    out_json: *mut *mut c_char,
) -> TgragStatus {
    guarded(|| {
        let Some(handle) = engine.as_mut() else {
            set_error("engine must not be null");
            return TgragStatus::InvalidArgument;
        };
        let dir = match req_str(docs_dir, "docs_dir") {
            Ok(s) => s,
            Err(status) => return status,
        };
        let docs = match tgrag::ingest::load_corpus(Path::new(dir)) {
            Ok(docs) => docs,
            Err(e) => return fail(e),
        };
        let report = match handle.engine.update(&docs) {
            Ok(report) => report,
            Err(e) => return fail(e),
        };
        if let Err(e) = handle.engine.save(&handle.index_dir) {
            return fail(e);
        }
        match serde_json::to_string(&report) {
            Ok(json) => emit_string(out_json, json),
            Err(e) => {
                set_error(&e.to_string());
                TgragStatus::Internal
            }
        }
    })
}
