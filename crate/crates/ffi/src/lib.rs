//! C ABI over the tmforest engine.
//!
//! All objects are opaque handles owned by the caller and released with the
//! matching `*_free`. Every fallible call returns a [`TmStatus`]; on failure
//! `tm_last_error()` describes the problem for the current thread. Panics
//! never cross the boundary.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use tmforest::features::{FeatureMap, QuantizedValue, TemplateSet};
use tmforest::forest::{train_forest, Forest, ForestConfig, QueryResult};
use tmforest::io::{self, Header};
use tmforest::pipeline::{detect, plan_for, DetectConfig};
use tmforest::Error;

/// Status codes. Values 2 to 4 agree with the command-line exit codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TmStatus {
    Ok = 0,
    /// Null pointer, bad UTF-8 or similar misuse of the API.
    InvalidArgument = 1,
    Config = 2,
    Data = 3,
    Compat = 4,
    /// The output buffer is too small; the required count was written.
    BufferTooSmall = 5,
    /// Internal panic; the handle arguments should be considered unusable.
    Internal = 6,
}

pub struct TmTemplates(TemplateSet);
pub struct TmFeatureMap(FeatureMap);
pub struct TmForest(Forest);

/// One detection. `template_id` indexes the template set used for detection.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TmDetection {
    pub x: u32,
    pub y: u32,
    pub template_id: u32,
    pub object_id: u32,
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
    pub scale: f64,
    pub score: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).expect("nul bytes removed"));
}

fn fail(e: Error) -> TmStatus {
    set_error(e.to_string());
    match e.exit_code() {
        2 => TmStatus::Config,
        4 => TmStatus::Compat,
        _ => TmStatus::Data,
    }
}

fn invalid(msg: &str) -> TmStatus {
    set_error(msg);
    TmStatus::InvalidArgument
}

fn guard(f: impl FnOnce() -> TmStatus) -> TmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => {
            set_error("internal panic");
            TmStatus::Internal
        }
    }
}

unsafe fn path_arg<'a>(p: *const c_char) -> Option<&'a str> {
    if p.is_null() {
        return None;
    }
    CStr::from_ptr(p).to_str().ok()
}

/// Message for the last failure on this thread; empty if none. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn tm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

unsafe fn load_into<T, H>(
    path: *const c_char,
    out: *mut *mut H,
    load: fn(&str) -> tmforest::Result<(T, Header)>,
    wrap: fn(T) -> H,
) -> TmStatus {
    guard(|| {
        let Some(path) = path_arg(path) else {
            return invalid("path is null or not UTF-8");
        };
        if out.is_null() {
            return invalid("out is null");
        }
        match load(path) {
            Ok((v, _)) => {
                *out = Box::into_raw(Box::new(wrap(v)));
                TmStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

unsafe fn free<H>(h: *mut H) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Load a template container.
#[no_mangle]
pub unsafe extern "C" fn tm_templates_load(path: *const c_char, out: *mut *mut TmTemplates) -> TmStatus {
    load_into(path, out, |p| io::load_templates(p), TmTemplates)
}

/// Load a scene feature-map container.
#[no_mangle]
pub unsafe extern "C" fn tm_feature_map_load(path: *const c_char, out: *mut *mut TmFeatureMap) -> TmStatus {
    load_into(path, out, |p| io::load_feature_map(p), TmFeatureMap)
}

/// Load a forest container.
#[no_mangle]
pub unsafe extern "C" fn tm_forest_load(path: *const c_char, out: *mut *mut TmForest) -> TmStatus {
    load_into(path, out, |p| io::load_forest(p), TmForest)
}

/// Release a handle. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn tm_templates_free(h: *mut TmTemplates) {
    free(h)
}

#[no_mangle]
pub unsafe extern "C" fn tm_feature_map_free(h: *mut TmFeatureMap) {
    free(h)
}

#[no_mangle]
pub unsafe extern "C" fn tm_forest_free(h: *mut TmForest) {
    free(h)
}

/// Number of templates in the set, 0 for null.
#[no_mangle]
pub unsafe extern "C" fn tm_templates_count(h: *const TmTemplates) -> usize {
    h.as_ref().map_or(0, |t| t.0.len())
}

/// Descriptor length (coordinates per window), 0 for null.
#[no_mangle]
pub unsafe extern "C" fn tm_forest_descriptor_len(h: *const TmForest) -> usize {
    h.as_ref().map_or(0, |f| f.0.descriptor_len())
}

/// Train a forest with default parameters except `trees`.
#[no_mangle]
pub unsafe extern "C" fn tm_forest_train(
    templates: *const TmTemplates,
    trees: u32,
    seed: u64,
    out: *mut *mut TmForest,
) -> TmStatus {
    guard(|| {
        let (Some(t), false) = (templates.as_ref(), out.is_null()) else {
            return invalid("null argument");
        };
        let cfg = ForestConfig {
            trees: trees as usize,
            ..ForestConfig::default()
        };
        match train_forest(&t.0, &cfg, seed) {
            Ok(f) => {
                *out = Box::into_raw(Box::new(TmForest(f)));
                TmStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Write a forest container to `path`.
#[no_mangle]
pub unsafe extern "C" fn tm_forest_save(forest: *const TmForest, path: *const c_char) -> TmStatus {
    guard(|| {
        let (Some(f), Some(path)) = (forest.as_ref(), path_arg(path)) else {
            return invalid("null argument or path not UTF-8");
        };
        match io::write_file(path, &io::encode_forest(&f.0, &Header::new(""))) {
            Ok(()) => TmStatus::Ok,
            Err(e) => fail(e),
        }
    })
}

/// Query a descriptor of `len` quantized values (0 = missing, 1..=8).
///
/// On success `*rejected_depth` is -1 and the sorted candidate ids are
/// written to `ids`, or it holds the depth at which every tree rejected and
/// `*count` is 0. If `capacity` is too small, `*count` receives the needed
/// size and `BufferTooSmall` is returned.
#[no_mangle]
pub unsafe extern "C" fn tm_forest_query(
    forest: *const TmForest,
    descriptor: *const u8,
    len: usize,
    ids: *mut u32,
    capacity: usize,
    count: *mut usize,
    rejected_depth: *mut i32,
) -> TmStatus {
    guard(|| {
        let Some(f) = forest.as_ref() else {
            return invalid("forest is null");
        };
        if descriptor.is_null() || count.is_null() || rejected_depth.is_null() || (ids.is_null() && capacity > 0) {
            return invalid("null argument");
        }
        if len != f.0.descriptor_len() {
            return fail(Error::Shape(format!(
                "descriptor has {len} values, forest expects {}",
                f.0.descriptor_len()
            )));
        }
        let raw = std::slice::from_raw_parts(descriptor, len);
        let Some(v) = raw.iter().map(|&b| QuantizedValue::new(b)).collect::<Option<Vec<_>>>() else {
            return fail(Error::Data("descriptor value outside 0..=8".into()));
        };
        match f.0.query(&v) {
            QueryResult::Rejected { depth } => {
                *rejected_depth = depth as i32;
                *count = 0;
                TmStatus::Ok
            }
            QueryResult::Candidates(c) => {
                *rejected_depth = -1;
                *count = c.len();
                if c.len() > capacity {
                    set_error("candidate buffer too small");
                    return TmStatus::BufferTooSmall;
                }
                ptr::copy_nonoverlapping(c.as_ptr(), ids, c.len());
                TmStatus::Ok
            }
        }
    })
}

/// Detect templates in a scene with default detection settings. Buffer
/// semantics as in `tm_forest_query`.
#[no_mangle]
pub unsafe extern "C" fn tm_detect(
    scene: *const TmFeatureMap,
    forest: *const TmForest,
    templates: *const TmTemplates,
    seed: u64,
    out: *mut TmDetection,
    capacity: usize,
    count: *mut usize,
) -> TmStatus {
    guard(|| {
        let (Some(s), Some(f), Some(t)) = (scene.as_ref(), forest.as_ref(), templates.as_ref()) else {
            return invalid("null handle");
        };
        if count.is_null() || (out.is_null() && capacity > 0) {
            return invalid("null argument");
        }
        let cfg = DetectConfig::default();
        let plan = plan_for(&t.0, &cfg, seed);
        let result = match detect(&s.0, &f.0, &t.0, &cfg, &plan) {
            Ok(r) => r,
            Err(e) => return fail(e),
        };
        let dets = result.detections;
        *count = dets.len();
        if dets.len() > capacity {
            set_error("detection buffer too small");
            return TmStatus::BufferTooSmall;
        }
        for (i, d) in dets.iter().enumerate() {
            *out.add(i) = TmDetection {
                x: d.x as u32,
                y: d.y as u32,
                template_id: d.template_id,
                object_id: d.object_id,
                yaw: d.pose.yaw,
                pitch: d.pose.pitch,
                roll: d.pose.roll,
                scale: d.pose.scale,
                score: d.score,
            };
        }
        TmStatus::Ok
    })
}
