//! C ABI for the curation library.
//!
//! Conventions:
//! * Every function returns a [`CurateStatus`]; results come back through
//!   out-pointers.
//! * On failure, [`curate_last_error_message`] describes the most recent
//!   error on the calling thread.
//! * Handles are opaque and must be released with their `_free` function.
//! * Strings returned by the library are released with [`curate_string_free`].
//! * Panics never cross the boundary; they surface as `CURATE_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use curate::fuzzy::{self, FuzzyConfig};
use curate::pipeline::{self, PipelineConfig};
use curate::sketch::{self, LshParams, MinHashSignature, ShingleUnit};
use curate::{Document, Error, Source};

/// Result code of every exported function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurateStatus {
    Ok = 0,
    /// Null pointer, invalid UTF-8 or an out-of-range parameter.
    InvalidArgument = 1,
    Io = 2,
    Parse = 3,
    /// A stage or pipeline failed while running.
    Stage = 4,
    Panic = 5,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(err: &Error) -> CurateStatus {
    match err {
        Error::Io { .. } => CurateStatus::Io,
        Error::Parse { .. } | Error::MissingField { .. } | Error::DuplicateId { .. } | Error::Format(_) => {
            CurateStatus::Parse
        }
        Error::Param(_) | Error::Config(_) | Error::EmptyDocument | Error::DegenerateEmbedding => {
            CurateStatus::InvalidArgument
        }
        Error::Stage { .. } | Error::Pipeline { .. } | Error::Remote(_) => CurateStatus::Stage,
    }
}

struct Failure(CurateStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn invalid(msg: &str) -> Failure {
    Failure(CurateStatus::InvalidArgument, msg.to_string())
}

/// Runs `f`, converting errors and panics into a status code.
fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> CurateStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            CurateStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            CurateStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(invalid(&format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(&format!("{name} is not valid UTF-8")))
}

fn out_arg<T>(p: *mut T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(invalid(&format!("{name} is null")))
    } else {
        Ok(())
    }
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into the library on the same thread; do not free.
#[no_mangle]
pub extern "C" fn curate_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Releases a string returned by the library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn curate_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Cleans `text` and returns a newly allocated string in `out`.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn curate_clean_text(text: *const c_char, out: *mut *mut c_char) -> CurateStatus {
    guard(|| {
        let text = str_arg(text, "text")?;
        out_arg(out, "out")?;
        let (cleaned, _) = curate::clean::clean_text(text);
        let cleaned = CString::new(cleaned).map_err(|_| invalid("text contains NUL"))?;
        *out = cleaned.into_raw();
        Ok(())
    })
}

/// Probability that two sets with Jaccard similarity `s` share at least one
/// LSH bucket under `bands` bands of `rows` rows.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn curate_lsh_collision_probability(
    s: f64,
    bands: usize,
    rows: usize,
    out: *mut f64,
) -> CurateStatus {
    guard(|| {
        out_arg(out, "out")?;
        let params = LshParams::new(bands, rows)?;
        *out = sketch::lsh_collision_probability(s, params)?;
        Ok(())
    })
}

/// Opaque MinHash signature.
pub struct CurateSignature(MinHashSignature);

fn parse_unit(unit: u32) -> Result<ShingleUnit, Failure> {
    match unit {
        0 => Ok(ShingleUnit::Word),
        1 => Ok(ShingleUnit::Char),
        _ => Err(invalid("unit must be 0 (word) or 1 (char)")),
    }
}

/// Shingles `text` (`unit` 0 = word, 1 = char) and signs it with
/// `num_hashes` seeded hash functions.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn curate_signature_from_text(
    text: *const c_char,
    k: usize,
    unit: u32,
    num_hashes: usize,
    seed: u64,
    out: *mut *mut CurateSignature,
) -> CurateStatus {
    guard(|| {
        let text = str_arg(text, "text")?;
        out_arg(out, "out")?;
        let set = sketch::shingle(text, k, parse_unit(unit)?)?;
        let sig = sketch::minhash(&set, num_hashes, seed)?;
        *out = Box::into_raw(Box::new(CurateSignature(sig)));
        Ok(())
    })
}

/// Number of values in the signature.
///
/// # Safety
/// `sig` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn curate_signature_len(sig: *const CurateSignature) -> usize {
    sig.as_ref().map_or(0, |s| s.0.len())
}

/// Pointer to the signature's values, valid while the handle lives.
///
/// # Safety
/// `sig` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn curate_signature_values(sig: *const CurateSignature) -> *const u64 {
    sig.as_ref().map_or(ptr::null(), |s| s.0.values.as_ptr())
}

/// Fraction of agreeing positions, an estimate of Jaccard similarity.
///
/// # Safety
/// `a` and `b` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn curate_signature_similarity(
    a: *const CurateSignature,
    b: *const CurateSignature,
    out: *mut f64,
) -> CurateStatus {
    guard(|| {
        let (a, b) = match (a.as_ref(), b.as_ref()) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(invalid("signature is null")),
        };
        out_arg(out, "out")?;
        *out = sketch::estimate_jaccard(&a.0, &b.0)?;
        Ok(())
    })
}

/// # Safety
/// `sig` must come from [`curate_signature_from_text`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn curate_signature_free(sig: *mut CurateSignature) {
    if !sig.is_null() {
        drop(Box::from_raw(sig));
    }
}

/// Opaque in-memory near-duplicate session.
pub struct CurateDedup {
    config: FuzzyConfig,
    docs: Vec<Document>,
}

/// Starts a session with default shingling and banding, the given
/// similarity threshold, anchor fraction and seed.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn curate_dedup_new(
    tau: f64,
    anchor_fraction: f64,
    seed: u64,
    out: *mut *mut CurateDedup,
) -> CurateStatus {
    guard(|| {
        out_arg(out, "out")?;
        let config = FuzzyConfig {
            tau,
            anchor_fraction,
            seed,
            ..FuzzyConfig::default()
        };
        config.validate()?;
        *out = Box::into_raw(Box::new(CurateDedup {
            config,
            docs: Vec::new(),
        }));
        Ok(())
    })
}

/// Adds one document. Ids must be unique within the session.
///
/// # Safety
/// `dedup` must be a live handle; `text` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn curate_dedup_add(dedup: *mut CurateDedup, id: u64, text: *const c_char) -> CurateStatus {
    guard(|| {
        let dedup = dedup.as_mut().ok_or_else(|| invalid("dedup is null"))?;
        let text = str_arg(text, "text")?;
        if dedup.docs.iter().any(|d| d.id == id) {
            return Err(invalid(&format!("duplicate id {id}")));
        }
        dedup.docs.push(Document::new(id, Source::Other("ffi".into()), text));
        Ok(())
    })
}

/// Runs deduplication over the added documents and writes up to `capacity`
/// retained ids, ascending, into `ids`. `count` receives the total number
/// retained; call again with a larger buffer if it exceeds `capacity`.
///
/// # Safety
/// `dedup` must be a live handle; `ids` must hold `capacity` values (may be
/// null when `capacity` is 0); `count` must be writable.
#[no_mangle]
pub unsafe extern "C" fn curate_dedup_run(
    dedup: *const CurateDedup,
    ids: *mut u64,
    capacity: usize,
    count: *mut usize,
) -> CurateStatus {
    guard(|| {
        let dedup = dedup.as_ref().ok_or_else(|| invalid("dedup is null"))?;
        out_arg(count, "count")?;
        if ids.is_null() && capacity > 0 {
            return Err(invalid("ids is null"));
        }
        let outcome = fuzzy::dedup_fuzzy(dedup.docs.clone(), &dedup.config)?;
        *count = outcome.retained.len();
        for (i, doc) in outcome.retained.iter().take(capacity).enumerate() {
            *ids.add(i) = doc.id;
        }
        Ok(())
    })
}

/// # Safety
/// `dedup` must come from [`curate_dedup_new`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn curate_dedup_free(dedup: *mut CurateDedup) {
    if !dedup.is_null() {
        drop(Box::from_raw(dedup));
    }
}

/// Runs the pipeline described by a JSON config file.
///
/// # Safety
/// `config_path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn curate_pipeline_run(config_path: *const c_char) -> CurateStatus {
    guard(|| {
        let path = str_arg(config_path, "config_path")?;
        let cfg = PipelineConfig::load(Path::new(path))?;
        pipeline::run_pipeline(&cfg, None)?;
        Ok(())
    })
}
