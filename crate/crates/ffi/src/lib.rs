//! C ABI over `debias-core`.
//!
//! Handles are opaque pointers created by `*_load` and released by the
//! matching `*_free`. Every fallible call returns a [`DebiasCode`]; on
//! failure the message is available from [`debias_last_error`] on the same
//! thread. Strings returned through out-parameters are owned by the caller
//! and must be released with [`debias_string_free`].
//!
//! A handle may be used from several threads at once; the library never
//! mutates a loaded model.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use debias_core::backends::BackendRegistry;
use debias_core::debias::is_accepted;
use debias_core::evaluation::ConfusionCounts;
use debias_core::model::ModelStore;
use debias_core::pipeline::{Pipeline, PipelineConfig};
use debias_core::recognition::{lexicon_recognize, Lexicon};
use debias_core::{Detector, Error};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DebiasCode {
    Ok = 0,
    /// Bad argument, empty text, malformed config or data.
    InvalidInput = 1,
    /// Missing or unreadable model, or wrong model kind.
    Model = 2,
    /// A backend failed or broke its contract.
    Backend = 3,
    NullPointer = 4,
    /// An input string was not valid UTF-8.
    Utf8 = 5,
    /// A Rust panic was caught at the boundary.
    Panic = 6,
}

/// A loaded detector.
pub struct DebiasDetector {
    inner: Detector,
}

/// A loaded detector + recognizer + infiller pipeline.
pub struct DebiasPipeline {
    inner: Pipeline,
}

/// Classification metrics; undefined ratios are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DebiasMetrics {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn code_for(err: &Error) -> DebiasCode {
    match err {
        Error::Model(_) => DebiasCode::Model,
        Error::Backend(_) | Error::NoFill { .. } | Error::Contract(_) => DebiasCode::Backend,
        _ => DebiasCode::InvalidInput,
    }
}

struct Failure(DebiasCode, String);

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        Failure(code_for(&err), err.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(DebiasCode::NullPointer, format!("{what} is NULL"))
}

/// Runs `f`, converting errors and panics into codes.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DebiasCode {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            DebiasCode::Ok
        }
        Ok(Err(Failure(code, message))) => {
            set_error(&message);
            code
        }
        Err(panic) => {
            let message = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("panic: {message}"));
            DebiasCode::Panic
        }
    }
}

unsafe fn read_str<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if ptr.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|e| Failure(DebiasCode::Utf8, format!("{what}: {e}")))
}

fn into_c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|e| Failure(DebiasCode::InvalidInput, e.to_string()))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

/// Message for the last failed call on this thread, or "" after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn debias_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn debias_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn debias_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a saved detector from its model directory.
///
/// # Safety
/// `model_dir` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn debias_detector_load(model_dir: *const c_char, out: *mut *mut DebiasDetector) -> DebiasCode {
    guard(|| {
        let dir = read_str(model_dir, "model_dir")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = Detector::load(Path::new(dir), &BackendRegistry::with_defaults())?;
        write_out(out, Box::into_raw(Box::new(DebiasDetector { inner })), "out")
    })
}

/// Bias probability of `text`; `biased` receives 1 when it reaches the
/// detector threshold. Either out-pointer may be NULL.
///
/// # Safety
/// `detector` must come from [`debias_detector_load`]; `text` must be a
/// NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn debias_detector_detect(
    detector: *const DebiasDetector,
    text: *const c_char,
    probability: *mut f64,
    biased: *mut i32,
) -> DebiasCode {
    guard(|| {
        let detector = detector.as_ref().ok_or_else(|| null("detector"))?;
        let text = read_str(text, "text")?;
        let result = detector.inner.detect(text)?;
        if !probability.is_null() {
            probability.write(result.probability);
        }
        if !biased.is_null() {
            biased.write(i32::from(result.label.is_biased()));
        }
        Ok(())
    })
}

/// # Safety
/// `detector` must come from [`debias_detector_load`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn debias_detector_free(detector: *mut DebiasDetector) {
    if !detector.is_null() {
        drop(Box::from_raw(detector));
    }
}

/// Loads the three pipeline models from `model_dir`. `config_toml` holds a
/// pipeline config document, or NULL for the defaults.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn debias_pipeline_load(
    model_dir: *const c_char,
    config_toml: *const c_char,
    out: *mut *mut DebiasPipeline,
) -> DebiasCode {
    guard(|| {
        let dir = read_str(model_dir, "model_dir")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let config = if config_toml.is_null() {
            PipelineConfig::default()
        } else {
            PipelineConfig::from_toml(read_str(config_toml, "config_toml")?)?
        };
        let pipeline = Pipeline::load(config, &ModelStore::new(dir), &BackendRegistry::with_defaults())?;
        write_out(out, Box::into_raw(Box::new(DebiasPipeline { inner: pipeline })), "out")
    })
}

/// Runs the pipeline on `text` and stores the result as a JSON document in
/// `json_out` (free it with [`debias_string_free`]).
///
/// # Safety
/// `pipeline` must come from [`debias_pipeline_load`]; `text` must be a
/// NUL-terminated string; `json_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn debias_pipeline_run_json(
    pipeline: *const DebiasPipeline,
    text: *const c_char,
    json_out: *mut *mut c_char,
) -> DebiasCode {
    guard(|| {
        let pipeline = pipeline.as_ref().ok_or_else(|| null("pipeline"))?;
        let text = read_str(text, "text")?;
        if json_out.is_null() {
            return Err(null("json_out"));
        }
        let result = pipeline.inner.run(text)?;
        let json = serde_json::to_string(&result).map_err(|e| Failure(DebiasCode::Backend, e.to_string()))?;
        write_out(json_out, into_c_string(json)?, "json_out")
    })
}

/// # Safety
/// `pipeline` must come from [`debias_pipeline_load`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn debias_pipeline_free(pipeline: *mut DebiasPipeline) {
    if !pipeline.is_null() {
        drop(Box::from_raw(pipeline));
    }
}

/// Metrics for `len` binary (gold, predicted) pairs, nonzero meaning BIASED.
///
/// # Safety
/// `gold` and `predicted` must point to `len` readable bytes (or be NULL
/// when `len` is 0); `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn debias_metrics(
    gold: *const u8,
    predicted: *const u8,
    len: usize,
    out: *mut DebiasMetrics,
) -> DebiasCode {
    guard(|| {
        let (gold, predicted) = if len == 0 {
            (&[][..], &[][..])
        } else {
            if gold.is_null() || predicted.is_null() {
                return Err(null("label array"));
            }
            (std::slice::from_raw_parts(gold, len), std::slice::from_raw_parts(predicted, len))
        };
        let g: Vec<bool> = gold.iter().map(|&b| b != 0).collect();
        let p: Vec<bool> = predicted.iter().map(|&b| b != 0).collect();
        let counts = ConfusionCounts::from_bools(&g, &p);
        let m = counts.metrics();
        let nan = |v: Option<f64>| v.unwrap_or(f64::NAN);
        write_out(
            out,
            DebiasMetrics {
                tp: counts.tp,
                fp: counts.fp,
                fn_: counts.fn_,
                tn: counts.tn,
                precision: nan(m.precision),
                recall: nan(m.recall),
                f1: nan(m.f1),
                accuracy: nan(m.accuracy),
            },
            "out",
        )
    })
}

/// Applies the acceptance rule to `len` candidate probabilities: slot `i` of
/// `accepted` becomes 1 when `probabilities[i] < threshold` or
/// `probabilities[i] < original_probability`.
///
/// # Safety
/// `probabilities` must hold `len` readable values and `accepted` `len`
/// writable bytes.
#[no_mangle]
pub unsafe extern "C" fn debias_select(
    original_probability: f64,
    probabilities: *const f64,
    len: usize,
    threshold: f64,
    accepted: *mut u8,
) -> DebiasCode {
    guard(|| {
        let unit = |p: f64| (0.0..=1.0).contains(&p);
        if !unit(original_probability) || !unit(threshold) {
            return Err(Failure(DebiasCode::InvalidInput, "probabilities must lie in [0, 1]".into()));
        }
        if len == 0 {
            return Ok(());
        }
        if probabilities.is_null() || accepted.is_null() {
            return Err(null("array"));
        }
        let probabilities = std::slice::from_raw_parts(probabilities, len);
        if let Some(p) = probabilities.iter().find(|p| !unit(**p)) {
            return Err(Failure(DebiasCode::InvalidInput, format!("probability {p} outside [0, 1]")));
        }
        let accepted = std::slice::from_raw_parts_mut(accepted, len);
        for (flag, &p) in accepted.iter_mut().zip(probabilities) {
            *flag = u8::from(is_accepted(p, original_probability, threshold));
        }
        Ok(())
    })
}

/// Finds newline-separated `phrases` in `text` and stores the spans as a JSON
/// array in `json_out`. Offsets are character indices.
///
/// # Safety
/// String arguments must be NUL-terminated; `json_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn debias_lexicon_recognize_json(
    phrases: *const c_char,
    text: *const c_char,
    json_out: *mut *mut c_char,
) -> DebiasCode {
    guard(|| {
        let lexicon = Lexicon::parse(read_str(phrases, "phrases")?);
        let text = read_str(text, "text")?;
        if json_out.is_null() {
            return Err(null("json_out"));
        }
        let spans = lexicon_recognize(&lexicon, text);
        let json = serde_json::to_string(&spans).map_err(|e| Failure(DebiasCode::Backend, e.to_string()))?;
        write_out(json_out, into_c_string(json)?, "json_out")
    })
}
