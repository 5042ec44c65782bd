//! C ABI over the geocaption library.
//!
//! Conventions:
//! - every function returns a [`GcStatus`]; results go through out-pointers;
//! - on failure a message is kept per thread and can be fetched with
//!   [`gc_last_error`];
//! - strings handed out by the library are NUL-terminated UTF-8 and must be
//!   released with [`gc_string_free`];
//! - handles are opaque and released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use geocaption::geometry::{simplify_dp, NormPoint};
use geocaption::metrics::{mtld, tokenize};
use geocaption::osm::OsmTag;
use geocaption::pipeline::{PatchStatus, Store};
use geocaption::refine::{fix_caption, RefineAction};
use geocaption::tagwiki::WikiDb;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    Store = 5,
    /// The requested value is undefined for this input.
    Undefined = 6,
    Panic = 99,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GcRefineAction {
    Kept = 0,
    Fixed = 1,
    Deleted = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GcPoint {
    pub x: f64,
    pub y: f64,
}

/// Patch counts per status.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GcStatusCounts {
    pub new_: u64,
    pub osm_fetched: u64,
    pub unusable: u64,
    pub captioned: u64,
    pub done: u64,
}

/// Tag-wiki handle.
pub struct GcWiki(WikiDb);

/// Pipeline store handle.
pub struct GcStore(Store);

thread_local! {
    static LAST_ERROR: RefCell<Option<String>> = const { RefCell::new(None) };
}

struct Failure(GcStatus, String);

fn guard(f: impl FnOnce() -> Result<GcStatus, Failure>) -> GcStatus {
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| p.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "panic".into());
        Err(Failure(GcStatus::Panic, msg))
    });
    match result {
        Ok(status) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            status
        }
        Err(Failure(status, msg)) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
            status
        }
    }
}

fn fail<T>(status: GcStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return fail(GcStatus::NullPointer, format!("{name} is null"));
    }
    CStr::from_ptr(p).to_str().or_else(|_| fail(GcStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().map_or_else(|| fail(GcStatus::NullPointer, format!("{name} is null")), Ok)
}

fn to_c(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s).map(CString::into_raw).or_else(|_| fail(GcStatus::InvalidArgument, "string contains NUL"))
}

/// Message of the last failed call on this thread, or NULL. Free with
/// `gc_string_free`.
#[no_mangle]
pub extern "C" fn gc_last_error() -> *mut c_char {
    LAST_ERROR.with(|e| {
        e.borrow().as_ref().and_then(|m| CString::new(m.replace('\0', " ")).ok()).map_or(ptr::null_mut(), CString::into_raw)
    })
}

/// # Safety
/// `s` must be NULL or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn gc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Library version as a static string; do not free.
#[no_mangle]
pub extern "C" fn gc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Douglas-Peucker simplification of `n` points. `out` must hold `n`
/// points; the kept count is written to `out_len`.
///
/// # Safety
/// `points` must point to `n` readable points and `out` to `n` writable ones.
#[no_mangle]
pub unsafe extern "C" fn gc_simplify_dp(
    points: *const GcPoint,
    n: usize,
    epsilon: f64,
    out: *mut GcPoint,
    out_len: *mut usize,
) -> GcStatus {
    guard(|| {
        let out_len = out_arg(out_len, "out_len")?;
        if n == 0 {
            *out_len = 0;
            return Ok(GcStatus::Ok);
        }
        if points.is_null() || out.is_null() {
            return fail(GcStatus::NullPointer, "points or out is null");
        }
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return fail(GcStatus::InvalidArgument, format!("epsilon must be finite and >= 0, got {epsilon}"));
        }
        let input: Vec<NormPoint> =
            std::slice::from_raw_parts(points, n).iter().map(|p| NormPoint::new(p.x, p.y)).collect();
        let kept = simplify_dp(&input, epsilon);
        let dst = std::slice::from_raw_parts_mut(out, n);
        for (d, p) in dst.iter_mut().zip(&kept) {
            *d = GcPoint { x: p.x, y: p.y };
        }
        *out_len = kept.len();
        Ok(GcStatus::Ok)
    })
}

/// MTLD of `text` after tokenizing and lower-casing. Returns
/// `Undefined` when no factor completes and `InvalidArgument` for text
/// without tokens.
///
/// # Safety
/// `text` must be a NUL-terminated string, `out` a writable double.
#[no_mangle]
pub unsafe extern "C" fn gc_mtld(text: *const c_char, threshold: f64, out: *mut f64) -> GcStatus {
    guard(|| {
        let text = str_arg(text, "text")?;
        let out = out_arg(out, "out")?;
        if !(threshold > 0.0 && threshold < 1.0) {
            return fail(GcStatus::InvalidArgument, format!("threshold must lie in (0, 1), got {threshold}"));
        }
        let tokens: Vec<String> = tokenize(text).into_iter().map(|t| t.to_lowercase()).collect();
        match mtld(&tokens, threshold) {
            Ok(Some(v)) => {
                *out = v;
                Ok(GcStatus::Ok)
            }
            Ok(None) => fail(GcStatus::Undefined, "MTLD undefined: no factor completed"),
            Err(e) => fail(GcStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Cleans one caption. `out_text` receives the cleaned text, or NULL when
/// the caption is deleted.
///
/// # Safety
/// `text` must be a NUL-terminated string; the out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn gc_fix_caption(
    text: *const c_char,
    out_action: *mut GcRefineAction,
    out_text: *mut *mut c_char,
) -> GcStatus {
    guard(|| {
        let text = str_arg(text, "text")?;
        let out_action = out_arg(out_action, "out_action")?;
        let out_text = out_arg(out_text, "out_text")?;
        let r = fix_caption(text);
        *out_action = match r.action {
            RefineAction::Kept => GcRefineAction::Kept,
            RefineAction::Fixed => GcRefineAction::Fixed,
            RefineAction::Deleted => GcRefineAction::Deleted,
        };
        *out_text = match r.text {
            Some(t) => to_c(t)?,
            None => ptr::null_mut(),
        };
        Ok(GcStatus::Ok)
    })
}

/// Loads a tag-wiki TSV file.
///
/// # Safety
/// `path` must be a NUL-terminated string, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gc_wiki_load(path: *const c_char, out: *mut *mut GcWiki) -> GcStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out = out_arg(out, "out")?;
        match WikiDb::load(path) {
            Ok(db) => {
                *out = Box::into_raw(Box::new(GcWiki(db)));
                Ok(GcStatus::Ok)
            }
            Err(e) => fail(GcStatus::Io, e.to_string()),
        }
    })
}

/// Interprets one `key=value` tag. Free the result with `gc_string_free`.
///
/// # Safety
/// `wiki` must come from `gc_wiki_load`; strings NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gc_wiki_interpret(
    wiki: *const GcWiki,
    key: *const c_char,
    value: *const c_char,
    out: *mut *mut c_char,
) -> GcStatus {
    guard(|| {
        let Some(wiki) = wiki.as_ref() else {
            return fail(GcStatus::NullPointer, "wiki is null");
        };
        let tag = OsmTag::new(str_arg(key, "key")?, str_arg(value, "value")?);
        *out_arg(out, "out")? = to_c(wiki.0.interpret_tag(&tag))?;
        Ok(GcStatus::Ok)
    })
}

/// # Safety
/// `wiki` must be NULL or come from `gc_wiki_load`, freed once.
#[no_mangle]
pub unsafe extern "C" fn gc_wiki_free(wiki: *mut GcWiki) {
    if !wiki.is_null() {
        drop(Box::from_raw(wiki));
    }
}

/// Opens (creating if needed) a pipeline store.
///
/// # Safety
/// `path` must be a NUL-terminated string, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gc_store_open(path: *const c_char, out: *mut *mut GcStore) -> GcStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out = out_arg(out, "out")?;
        match Store::open(path) {
            Ok(s) => {
                *out = Box::into_raw(Box::new(GcStore(s)));
                Ok(GcStatus::Ok)
            }
            Err(e) => fail(GcStatus::Store, e.to_string()),
        }
    })
}

/// # Safety
/// `store` must come from `gc_store_open`; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gc_store_status_counts(store: *const GcStore, out: *mut GcStatusCounts) -> GcStatus {
    guard(|| {
        let Some(store) = store.as_ref() else {
            return fail(GcStatus::NullPointer, "store is null");
        };
        let out = out_arg(out, "out")?;
        let counts = store.0.status_counts().or_else(|e| fail(GcStatus::Store, e.to_string()))?;
        let mut c = GcStatusCounts::default();
        for (status, n) in counts {
            match status {
                PatchStatus::New => c.new_ = n,
                PatchStatus::OsmFetched => c.osm_fetched = n,
                PatchStatus::Unusable => c.unusable = n,
                PatchStatus::Captioned => c.captioned = n,
                PatchStatus::Done => c.done = n,
            }
        }
        *out = c;
        Ok(GcStatus::Ok)
    })
}

/// # Safety
/// `store` must be NULL or come from `gc_store_open`, freed once.
#[no_mangle]
pub unsafe extern "C" fn gc_store_free(store: *mut GcStore) {
    if !store.is_null() {
        drop(Box::from_raw(store));
    }
}
