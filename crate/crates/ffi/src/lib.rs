//! C interface to trex-core.
//!
//! Every function returns a [`TrexStatus`]. On failure the message is kept
//! per thread and read with [`trex_last_error`]. Handles are opaque and
//! released with their `_free` function; strings produced by the library
//! are released with [`trex_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use trex_core::chem::canon::canonicalizer_from_env;
use trex_core::config::{RunConfig, Stage};
use trex_core::pipeline::{self, Predictor};
use trex_core::TrexError;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrexStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    MalformedSmiles = 3,
    Config = 4,
    Io = 5,
    MissingUpstream = 6,
    MissingDescription = 7,
    EmptySplit = 8,
    Model = 9,
    Panic = 10,
    Other = 11,
}

/// Run configuration.
pub struct TrexConfig(RunConfig);

/// Loaded checkpoints of a run.
pub struct TrexPredictor(Predictor);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &TrexError) -> TrexStatus {
    match e.root() {
        TrexError::MalformedSmiles { .. } | TrexError::UnsupportedArity(_) | TrexError::IncompleteMapping(_) => {
            TrexStatus::MalformedSmiles
        }
        TrexError::Config(_) => TrexStatus::Config,
        TrexError::Io(_) | TrexError::FileUnreadable { .. } => TrexStatus::Io,
        TrexError::MissingUpstream(_) => TrexStatus::MissingUpstream,
        TrexError::MissingDescription(_) => TrexStatus::MissingDescription,
        TrexError::EmptySplit => TrexStatus::EmptySplit,
        TrexError::Checkpoint(_) | TrexError::NonFiniteLoss { .. } | TrexError::ShapeMismatch(_) | TrexError::GenerationStuck(_) => {
            TrexStatus::Model
        }
        _ => TrexStatus::Other,
    }
}

enum Fail {
    Status(TrexStatus, String),
    Core(TrexError),
}

impl From<TrexError> for Fail {
    fn from(e: TrexError) -> Self {
        Fail::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> TrexStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TrexStatus::Ok,
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Fail::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("internal panic");
            TrexStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Status(TrexStatus::NullArgument, format!("{what} is null")));
    }
    // SAFETY: caller passes a NUL-terminated string valid for the call.
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Fail::Status(TrexStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    // SAFETY: caller passes a writable pointer or null.
    unsafe { p.as_mut() }.ok_or_else(|| Fail::Status(TrexStatus::NullArgument, format!("{what} is null")))
}

unsafe fn handle<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    // SAFETY: caller passes a live handle from this library or null.
    unsafe { p.as_mut() }.ok_or_else(|| Fail::Status(TrexStatus::NullArgument, format!("{what} is null")))
}

fn owned(s: String) -> Result<*mut c_char, Fail> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Fail::Status(TrexStatus::Other, "output contains NUL".into()))
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn trex_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn trex_string_free(s: *mut c_char) {
    if !s.is_null() {
        // SAFETY: allocated by CString::into_raw in this library.
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Default configuration, or the defaults overlaid with a `key = value`
/// file when `path` is non-null.
///
/// # Safety
/// `path` is null or a NUL-terminated string; `config` is writable.
#[no_mangle]
pub unsafe extern "C" fn trex_config_new(path: *const c_char, config: *mut *mut TrexConfig) -> TrexStatus {
    guard(|| {
        let slot = unsafe { out(config, "config") }?;
        let cfg = if path.is_null() {
            RunConfig::default()
        } else {
            RunConfig::from_file(Path::new(unsafe { text(path, "path") }?))?
        };
        *slot = Box::into_raw(Box::new(TrexConfig(cfg)));
        Ok(())
    })
}

/// Sets one field by dotted key, e.g. `epochs.center` or `run_dir`.
///
/// # Safety
/// `config` is a live handle; `key` and `value` are NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn trex_config_set(config: *mut TrexConfig, key: *const c_char, value: *const c_char) -> TrexStatus {
    guard(|| {
        let cfg = unsafe { handle(config, "config") }?;
        let (k, v) = unsafe { (text(key, "key")?, text(value, "value")?) };
        let mut next = cfg.0.clone();
        next.set(k, v)?;
        next.validate()?;
        cfg.0 = next;
        Ok(())
    })
}

/// The configuration as `key = value` lines.
///
/// # Safety
/// `config` is a live handle; `text_out` is writable.
#[no_mangle]
pub unsafe extern "C" fn trex_config_text(config: *mut TrexConfig, text_out: *mut *mut c_char) -> TrexStatus {
    guard(|| {
        let cfg = unsafe { handle(config, "config") }?;
        let slot = unsafe { out(text_out, "text_out") }?;
        *slot = owned(cfg.0.to_text())?;
        Ok(())
    })
}

/// # Safety
/// `config` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn trex_config_free(config: *mut TrexConfig) {
    if !config.is_null() {
        // SAFETY: created by Box::into_raw in trex_config_new.
        drop(unsafe { Box::from_raw(config) });
    }
}

/// Canonical SMILES of `smiles`, with stereo marks kept when `stereo` is non-zero.
///
/// # Safety
/// `smiles` is a NUL-terminated string; `canonical` is writable.
#[no_mangle]
pub unsafe extern "C" fn trex_canonicalize(smiles: *const c_char, stereo: i32, canonical: *mut *mut c_char) -> TrexStatus {
    guard(|| {
        let s = unsafe { text(smiles, "smiles") }?;
        let slot = unsafe { out(canonical, "canonical") }?;
        *slot = owned(canonicalizer_from_env()?.canonicalize(s, stereo != 0)?)?;
        Ok(())
    })
}

/// Splits the configured corpus (`data.path`, and `data.cross_path` when
/// set) into the run directory.
///
/// # Safety
/// `config` is a live handle.
#[no_mangle]
pub unsafe extern "C" fn trex_ingest(config: *mut TrexConfig) -> TrexStatus {
    guard(|| {
        let cfg = unsafe { handle(config, "config") }?;
        pipeline::ingest(&cfg.0)?;
        Ok(())
    })
}

/// Trains `stage` (`center`, `completion`, `rerank` or `pipeline`) on the
/// splits in the configured run directory.
///
/// # Safety
/// `config` is a live handle; `stage` is a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn trex_train(config: *mut TrexConfig, stage: *const c_char) -> TrexStatus {
    guard(|| {
        let cfg = unsafe { handle(config, "config") }?;
        let stage: Stage = unsafe { text(stage, "stage") }?.parse()?;
        pipeline::train_stage(&cfg.0, stage)?;
        Ok(())
    })
}

/// Evaluates the run and returns the summary as JSON.
///
/// # Safety
/// `config` is a live handle; `json` is writable.
#[no_mangle]
pub unsafe extern "C" fn trex_evaluate(config: *mut TrexConfig, json: *mut *mut c_char) -> TrexStatus {
    guard(|| {
        let cfg = unsafe { handle(config, "config") }?;
        let slot = unsafe { out(json, "json") }?;
        let summary = pipeline::evaluate(&cfg.0)?;
        *slot = owned(serde_json::to_string(&summary).map_err(TrexError::from)?)?;
        Ok(())
    })
}

/// Loads the checkpoints of the configured run.
///
/// # Safety
/// `config` is a live handle; `predictor` is writable.
#[no_mangle]
pub unsafe extern "C" fn trex_predictor_open(config: *mut TrexConfig, predictor: *mut *mut TrexPredictor) -> TrexStatus {
    guard(|| {
        let cfg = unsafe { handle(config, "config") }?;
        let slot = unsafe { out(predictor, "predictor") }?;
        *slot = Box::into_raw(Box::new(TrexPredictor(Predictor::open(&cfg.0)?)));
        Ok(())
    })
}

/// Ranked reactant sets for `product` as one JSON object. `reaction_type`
/// is 1 to 10, or 0 when unknown.
///
/// # Safety
/// `predictor` is a live handle; `product` is a NUL-terminated string;
/// `json` is writable.
#[no_mangle]
pub unsafe extern "C" fn trex_predict(
    predictor: *mut TrexPredictor,
    product: *const c_char,
    reaction_type: u8,
    json: *mut *mut c_char,
) -> TrexStatus {
    guard(|| {
        let p = unsafe { handle(predictor, "predictor") }?;
        let smiles = unsafe { text(product, "product") }?;
        let slot = unsafe { out(json, "json") }?;
        let rtype = (reaction_type != 0).then_some(reaction_type);
        let pred = p.0.predict(smiles, rtype)?;
        *slot = owned(serde_json::to_string(&pred).map_err(TrexError::from)?)?;
        Ok(())
    })
}

/// # Safety
/// `predictor` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn trex_predictor_free(predictor: *mut TrexPredictor) {
    if !predictor.is_null() {
        // SAFETY: created by Box::into_raw in trex_predictor_open.
        drop(unsafe { Box::from_raw(predictor) });
    }
}
