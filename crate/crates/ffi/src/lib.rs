//! C interface to the streaming decoding engine.
//!
//! Objects cross the boundary as opaque handles that the caller releases
//! with the matching `*_free` function. Every fallible call returns a
//! [`SimStatus`]; the message of the most recent failure on the calling
//! thread is available from [`sim_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use simulstream::align::median_filter;
use simulstream::corpus::{scripted_config, CorpusConfig};
use simulstream::metrics::{build_latency_record, dal, wer, LatencyMode, LatencyRecord};
use simulstream::model::{ScriptedModel, ScriptedModelConfig, StreamingModel, TraceReplayModel};
use simulstream::stream::{run_session, Policy, SessionConfig, SessionResult, TimingMode};
use simulstream::tdm::{if_scan, load_weights, TdmWeights};
use simulstream::trace::load_trace;
use simulstream::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimStatus {
    Ok = 0,
    NullArgument = 1,
    Config = 2,
    Validation = 3,
    Io = 4,
    ReplayMiss = 5,
    InvalidUtf8 = 6,
    UndefinedMetric = 7,
    BufferTooSmall = 8,
    Panic = 9,
    Internal = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimPolicy {
    AttentionGuided = 0,
    LocalAgreement = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimLatencyMode {
    Unaware = 0,
    Aware = 1,
}

/// Session parameters. Fill with [`sim_session_config_default`] and adjust.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SimSessionConfig {
    pub policy: SimPolicy,
    pub chunk_len_s: f64,
    pub l_threshold_frames: usize,
    pub median_window: usize,
    pub fire_threshold: f64,
    pub max_context_s: f64,
    pub agreement_n: usize,
    pub max_tokens_per_chunk: usize,
    pub pad_to_frames: usize,
    /// Nonzero charges the default synthetic per-step costs to aware latency.
    pub synthetic_timing: u8,
}

/// A streaming model: scripted or trace replay.
pub struct SimModel {
    inner: Box<dyn StreamingModel>,
}

/// Truncation-detector weights.
pub struct SimTdmWeights {
    inner: TdmWeights,
}

/// Outcome of one session.
pub struct SimResult {
    inner: SessionResult,
    transcript: CString,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(err: &Error) -> SimStatus {
    match err {
        Error::Config(_) => SimStatus::Config,
        Error::Validation(_)
        | Error::Capacity { .. }
        | Error::DegenerateInput(_)
        | Error::InvalidContext(_)
        | Error::Trace(_) => SimStatus::Validation,
        Error::UndefinedMetric(_) => SimStatus::UndefinedMetric,
        Error::Io(_) => SimStatus::Io,
        Error::ReplayMiss(_) => SimStatus::ReplayMiss,
        _ => SimStatus::Internal,
    }
}

struct Failure(SimStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SimStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SimStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside the library");
            SimStatus::Panic
        }
    }
}

fn null(name: &str) -> Failure {
    Failure(SimStatus::NullArgument, format!("{name} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(SimStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(name))
}

fn session_config(c: &SimSessionConfig, weights: Option<&SimTdmWeights>) -> SessionConfig {
    let mut s = SessionConfig {
        policy: match c.policy {
            SimPolicy::AttentionGuided => Policy::AttentionGuided,
            SimPolicy::LocalAgreement => Policy::LocalAgreement,
        },
        chunk_len_s: c.chunk_len_s,
        fire_threshold: c.fire_threshold,
        tdm: weights.map(|w| w.inner.clone()),
        max_tokens_per_chunk: c.max_tokens_per_chunk,
        pad_to_frames: c.pad_to_frames,
        ..SessionConfig::default()
    };
    s.stop.l_threshold_frames = c.l_threshold_frames;
    s.stop.median_window = c.median_window;
    s.context.max_context_s = c.max_context_s;
    s.local_agreement.n = c.agreement_n;
    if c.synthetic_timing != 0 {
        s.timing = TimingMode::Synthetic(Default::default());
    }
    s
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sim_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Writes the library defaults into `out`.
///
/// # Safety
/// `out` must be null or point to writable memory for one config.
#[no_mangle]
pub unsafe extern "C" fn sim_session_config_default(out: *mut SimSessionConfig) -> SimStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let d = SessionConfig::default();
        *out = SimSessionConfig {
            policy: SimPolicy::AttentionGuided,
            chunk_len_s: d.chunk_len_s,
            l_threshold_frames: d.stop.l_threshold_frames,
            median_window: d.stop.median_window,
            fire_threshold: d.fire_threshold,
            max_context_s: d.context.max_context_s,
            agreement_n: d.local_agreement.n,
            max_tokens_per_chunk: d.max_tokens_per_chunk,
            pad_to_frames: d.pad_to_frames,
            synthetic_timing: 0,
        };
        Ok(())
    })
}

fn boxed_model(inner: Box<dyn StreamingModel>, out: &mut *mut SimModel) {
    *out = Box::into_raw(Box::new(SimModel { inner }));
}

/// Builds a scripted model from a corpus generator config (TOML text).
///
/// # Safety
/// `toml` must be null or a NUL-terminated string; `out` must be null or
/// writable.
#[no_mangle]
pub unsafe extern "C" fn sim_model_from_corpus(toml: *const c_char, out: *mut *mut SimModel) -> SimStatus {
    guard(|| {
        let text = str_arg(toml, "toml")?;
        let out = out_arg(out, "out")?;
        let cfg = scripted_config(&CorpusConfig::from_toml_str(text)?)?;
        boxed_model(Box::new(ScriptedModel::new(cfg)?), out);
        Ok(())
    })
}

/// Loads a scripted model config (TOML file).
///
/// # Safety
/// `path` must be null or a NUL-terminated string; `out` must be null or
/// writable.
#[no_mangle]
pub unsafe extern "C" fn sim_model_load_scripted(path: *const c_char, out: *mut *mut SimModel) -> SimStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out = out_arg(out, "out")?;
        let cfg = ScriptedModelConfig::load(path)?;
        boxed_model(Box::new(ScriptedModel::new(cfg)?), out);
        Ok(())
    })
}

/// Opens a trace file for replay.
///
/// # Safety
/// `path` must be null or a NUL-terminated string; `out` must be null or
/// writable.
#[no_mangle]
pub unsafe extern "C" fn sim_model_load_trace(path: *const c_char, out: *mut *mut SimModel) -> SimStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out = out_arg(out, "out")?;
        boxed_model(Box::new(TraceReplayModel::new(load_trace(path)?)?), out);
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from a `sim_model_*` constructor that
/// has not been freed.
#[no_mangle]
pub unsafe extern "C" fn sim_model_free(model: *mut SimModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Loads truncation-detector weights.
///
/// # Safety
/// `path` must be null or a NUL-terminated string; `out` must be null or
/// writable.
#[no_mangle]
pub unsafe extern "C" fn sim_tdm_weights_load(path: *const c_char, out: *mut *mut SimTdmWeights) -> SimStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out = out_arg(out, "out")?;
        let inner = load_weights(path)?;
        *out = Box::into_raw(Box::new(SimTdmWeights { inner }));
        Ok(())
    })
}

/// # Safety
/// `weights` must be null or a live handle from [`sim_tdm_weights_load`].
#[no_mangle]
pub unsafe extern "C" fn sim_tdm_weights_free(weights: *mut SimTdmWeights) {
    if !weights.is_null() {
        drop(Box::from_raw(weights));
    }
}

/// Streams the model's whole input through one session. `weights` may be
/// null to disable truncation detection.
///
/// # Safety
/// `model` and `config` must be live and non-null; `weights` null or live;
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sim_run_session(
    model: *const SimModel,
    config: *const SimSessionConfig,
    weights: *const SimTdmWeights,
    out: *mut *mut SimResult,
) -> SimStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let config = config.as_ref().ok_or_else(|| null("config"))?;
        let out = out_arg(out, "out")?;
        let frames = model
            .inner
            .stream_frames()
            .ok_or_else(|| Failure(SimStatus::Validation, "model does not know its stream length".into()))?;
        let cfg = session_config(config, weights.as_ref());
        let inner = run_session(model.inner.as_ref(), &cfg, frames)?;
        let transcript = CString::new(inner.transcript().replace('\0', " ")).expect("NUL bytes removed");
        *out = Box::into_raw(Box::new(SimResult { inner, transcript }));
        Ok(())
    })
}

/// # Safety
/// `result` must be null or a live handle from [`sim_run_session`].
#[no_mangle]
pub unsafe extern "C" fn sim_result_free(result: *mut SimResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Committed transcript, owned by `result`. Null if `result` is null.
///
/// # Safety
/// `result` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn sim_result_transcript(result: *const SimResult) -> *const c_char {
    result.as_ref().map_or(ptr::null(), |r| r.transcript.as_ptr())
}

/// Number of committed tokens, 0 if `result` is null.
///
/// # Safety
/// `result` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn sim_result_token_count(result: *const SimResult) -> usize {
    result.as_ref().map_or(0, |r| r.inner.committed.len())
}

/// Copies per-token commit times (seconds) into `out`, which must hold
/// `sim_result_token_count` values.
///
/// # Safety
/// `result` live; `out` null or writable for `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn sim_result_token_times(
    result: *const SimResult,
    mode: SimLatencyMode,
    out: *mut f64,
    cap: usize,
) -> SimStatus {
    guard(|| {
        let r = result.as_ref().ok_or_else(|| null("result"))?;
        let n = r.inner.committed.len();
        if cap < n {
            return Err(Failure(SimStatus::BufferTooSmall, format!("need {n} slots, got {cap}")));
        }
        if n == 0 {
            return Ok(());
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let dst = std::slice::from_raw_parts_mut(out, n);
        for (d, t) in dst.iter_mut().zip(&r.inner.committed) {
            *d = match mode {
                SimLatencyMode::Unaware => t.unaware_s,
                SimLatencyMode::Aware => t.aware_s,
            };
        }
        Ok(())
    })
}

/// Word-level DAL of the session in seconds.
///
/// # Safety
/// `result` live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sim_result_dal(result: *const SimResult, mode: SimLatencyMode, out: *mut f64) -> SimStatus {
    guard(|| {
        let r = result.as_ref().ok_or_else(|| null("result"))?;
        let out = out_arg(out, "out")?;
        let mode = match mode {
            SimLatencyMode::Unaware => LatencyMode::Unaware,
            SimLatencyMode::Aware => LatencyMode::Aware,
        };
        *out = dal(&build_latency_record(&r.inner, mode))?;
        Ok(())
    })
}

/// Integrate-and-fire scan. Writes up to `cap` fire indices to `fires`, the
/// total count to `n_fires` and the leftover integral to `residual`.
/// Returns `BufferTooSmall` (with counts still written) if `cap` is short.
///
/// # Safety
/// `alpha` readable for `len` doubles; `fires` writable for `cap` entries;
/// `n_fires` and `residual` writable.
#[no_mangle]
pub unsafe extern "C" fn sim_if_scan(
    alpha: *const f64,
    len: usize,
    threshold: f64,
    fires: *mut usize,
    cap: usize,
    n_fires: *mut usize,
    residual: *mut f64,
) -> SimStatus {
    guard(|| {
        let alpha = slice_arg(alpha, len, "alpha")?;
        let n_fires = out_arg(n_fires, "n_fires")?;
        let residual = out_arg(residual, "residual")?;
        let r = if_scan(alpha, threshold);
        *n_fires = r.fire_positions.len();
        *residual = r.residual;
        let k = r.fire_positions.len().min(cap);
        if k > 0 {
            if fires.is_null() {
                return Err(null("fires"));
            }
            std::slice::from_raw_parts_mut(fires, k).copy_from_slice(&r.fire_positions[..k]);
        }
        if k < r.fire_positions.len() {
            return Err(Failure(SimStatus::BufferTooSmall, format!("{} fires, room for {cap}", r.fire_positions.len())));
        }
        Ok(())
    })
}

/// Median filter with reflect padding into `out` (`len` values).
///
/// # Safety
/// `input` readable and `out` writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sim_median_filter(input: *const f64, len: usize, width: usize, out: *mut f64) -> SimStatus {
    guard(|| {
        let input = slice_arg(input, len, "input")?;
        let filtered = median_filter(input, width)?;
        if len > 0 {
            if out.is_null() {
                return Err(null("out"));
            }
            std::slice::from_raw_parts_mut(out, len).copy_from_slice(&filtered);
        }
        Ok(())
    })
}

/// DAL of emission times `g` against a source of `source_s` seconds.
///
/// # Safety
/// `g` readable for `len` doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sim_dal(g: *const f64, len: usize, source_s: f64, out: *mut f64) -> SimStatus {
    guard(|| {
        let g = slice_arg(g, len, "g")?;
        let out = out_arg(out, "out")?;
        *out = dal(&LatencyRecord {
            g: g.to_vec(),
            source_seconds: source_s,
            mode: LatencyMode::Unaware,
        })?;
        Ok(())
    })
}

/// Word error rate after normalization.
///
/// # Safety
/// `reference` and `hypothesis` NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sim_wer(reference: *const c_char, hypothesis: *const c_char, out: *mut f64) -> SimStatus {
    guard(|| {
        let reference = str_arg(reference, "reference")?;
        let hypothesis = str_arg(hypothesis, "hypothesis")?;
        let out = out_arg(out, "out")?;
        *out = wer(reference, hypothesis)?;
        Ok(())
    })
}
