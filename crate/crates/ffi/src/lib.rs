//! C ABI over the nudging engine.
//!
//! Every call takes an opaque `NudgeEngine*`, exchanges JSON as
//! NUL-terminated UTF-8 strings and returns a `NudgeStatus`. Output strings
//! are owned by the caller and released with `nudge_string_free`. On a
//! non-OK status, `nudge_last_error_message` describes the failure for the
//! calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use serde::Deserialize;

use nudge_core::canonical::to_canonical_string;
use nudge_core::capture::RawEvent;
use nudge_core::config::Settings;
use nudge_core::domain::{EmotionDistribution, NudgeId, ReasonerKind, SessionId, Thumbs};
use nudge_core::orchestrator::engine::{ContextInput, NewSession};
use nudge_core::orchestrator::{Engine, EngineError};

/// Result of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NudgeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidJson = 3,
    NotFound = 4,
    /// The engine refused the request: bad id, duplicate session, invalid payload.
    Rejected = 5,
    Internal = 6,
}

/// Opaque engine handle.
pub struct NudgeEngine {
    inner: Engine,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(NudgeStatus, String);

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        let status = match &e {
            EngineError::UnknownSession(_) | EngineError::UnknownNudge { .. } => NudgeStatus::NotFound,
            EngineError::SessionExists(_)
            | EngineError::BadSessionId(_)
            | EngineError::Capture(_)
            | EngineError::Invalid(_)
            | EngineError::Fairness(_) => NudgeStatus::Rejected,
            EngineError::Trace(_) | EngineError::Store(_) | EngineError::Setup(_) => NudgeStatus::Internal,
        };
        Failure(status, e.to_string())
    }
}

type Outcome = Result<Option<String>, Failure>;

/// Runs `f`, catching panics, writing any output string and recording errors.
fn guard(out: *mut *mut c_char, f: impl FnOnce() -> Outcome) -> NudgeStatus {
    if !out.is_null() {
        unsafe { *out = ptr::null_mut() };
    }
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let what = p
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| p.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "panic".into());
        Err(Failure(NudgeStatus::Internal, format!("internal error: {what}")))
    });
    match result {
        Ok(text) => {
            set_error("");
            if let Some(text) = text {
                if out.is_null() {
                    set_error("output pointer is null");
                    return NudgeStatus::NullPointer;
                }
                match CString::new(text) {
                    Ok(c) => unsafe { *out = c.into_raw() },
                    Err(_) => {
                        set_error("output contains a NUL byte");
                        return NudgeStatus::Internal;
                    }
                }
            }
            NudgeStatus::Ok
        }
        Err(Failure(status, msg)) => {
            set_error(&msg);
            status
        }
    }
}

fn engine<'a>(ptr: *const NudgeEngine) -> Result<&'a Engine, Failure> {
    unsafe { ptr.as_ref() }
        .map(|e| &e.inner)
        .ok_or_else(|| Failure(NudgeStatus::NullPointer, "engine handle is null".into()))
}

fn text<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if ptr.is_null() {
        return Err(Failure(NudgeStatus::NullPointer, format!("{what} is null")));
    }
    unsafe { CStr::from_ptr(ptr) }
        .to_str()
        .map_err(|e| Failure(NudgeStatus::InvalidUtf8, format!("{what}: {e}")))
}

fn json<T: for<'de> Deserialize<'de>>(ptr: *const c_char, what: &str) -> Result<T, Failure> {
    serde_json::from_str(text(ptr, what)?).map_err(|e| Failure(NudgeStatus::InvalidJson, format!("{what}: {e}")))
}

fn session(ptr: *const c_char) -> Result<SessionId, Failure> {
    text(ptr, "session id").map(SessionId::new)
}

fn encode<T: serde::Serialize>(value: &T) -> Outcome {
    to_canonical_string(value)
        .map(Some)
        .map_err(|e| Failure(NudgeStatus::Internal, e.to_string()))
}

/// Builds an engine. `config_path` may be null for the shipped defaults.
///
/// # Safety
/// `config_path` is null or a valid C string; `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nudge_engine_new(config_path: *const c_char, out: *mut *mut NudgeEngine) -> NudgeStatus {
    if out.is_null() {
        set_error("output pointer is null");
        return NudgeStatus::NullPointer;
    }
    *out = ptr::null_mut();
    let mut handle = ptr::null_mut();
    let status = guard(ptr::null_mut(), || {
        let settings = if config_path.is_null() {
            Settings::default()
        } else {
            let p = text(config_path, "config path")?;
            Settings::load(Path::new(p)).map_err(|e| Failure(NudgeStatus::Rejected, e.to_string()))?
        };
        let inner = Engine::from_settings(settings.with_env_overrides())?;
        handle = Box::into_raw(Box::new(NudgeEngine { inner }));
        Ok(None)
    });
    *out = handle;
    status
}

/// Releases an engine. Null is ignored.
///
/// # Safety
/// `engine` is null or came from `nudge_engine_new` and is not used again.
#[no_mangle]
pub unsafe extern "C" fn nudge_engine_free(engine: *mut NudgeEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Creates a session. `request_json` may be null for an empty request.
/// Writes `{"session_id": ...}`.
///
/// # Safety
/// Pointers are null or valid; strings are NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn nudge_session_create(
    engine: *const NudgeEngine,
    request_json: *const c_char,
    out_json: *mut *mut c_char,
) -> NudgeStatus {
    guard(out_json, || {
        let e = self::engine(engine)?;
        let req: NewSession = if request_json.is_null() { NewSession::default() } else { json(request_json, "request")? };
        let id = e.create_session(req)?;
        encode(&serde_json::json!({ "session_id": id }))
    })
}

/// Sets device and time context from `{"device", "at", "utc_offset_minutes"}`.
///
/// # Safety
/// Pointers are null or valid; strings are NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn nudge_session_context(
    engine: *const NudgeEngine,
    session_id: *const c_char,
    context_json: *const c_char,
    out_json: *mut *mut c_char,
) -> NudgeStatus {
    guard(out_json, || {
        let e = self::engine(engine)?;
        let input: ContextInput = json(context_json, "context")?;
        encode(&e.set_context(&session(session_id)?, &input)?)
    })
}

/// Ingests a JSON array of raw events as one batch.
///
/// # Safety
/// Pointers are null or valid; strings are NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn nudge_session_events(
    engine: *const NudgeEngine,
    session_id: *const c_char,
    events_json: *const c_char,
    out_json: *mut *mut c_char,
) -> NudgeStatus {
    guard(out_json, || {
        let e = self::engine(engine)?;
        let events: Vec<RawEvent> = json(events_json, "events")?;
        encode(&e.ingest_events(&session(session_id)?, &events)?)
    })
}

/// Records one emotion frame.
///
/// # Safety
/// Pointers are null or valid; strings are NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn nudge_session_emotion(
    engine: *const NudgeEngine,
    session_id: *const c_char,
    frame_json: *const c_char,
    out_json: *mut *mut c_char,
) -> NudgeStatus {
    guard(out_json, || {
        let e = self::engine(engine)?;
        let frame: EmotionDistribution = json(frame_json, "frame")?;
        encode(&e.record_emotion(&session(session_id)?, frame)?)
    })
}

/// Runs the pipeline. `reasoner` is `"rule_based"`, `"llm_backed"` or null
/// for rule-based. Writes the outcome.
///
/// # Safety
/// Pointers are null or valid; strings are NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn nudge_session_run(
    engine: *const NudgeEngine,
    session_id: *const c_char,
    reasoner: *const c_char,
    out_json: *mut *mut c_char,
) -> NudgeStatus {
    guard(out_json, || {
        let e = self::engine(engine)?;
        let kind = if reasoner.is_null() {
            ReasonerKind::RuleBased
        } else {
            ReasonerKind::parse_loose(text(reasoner, "reasoner")?).map_err(|e| Failure(NudgeStatus::Rejected, e.to_string()))?
        };
        encode(&e.run_pipeline(&session(session_id)?, kind)?)
    })
}

#[derive(Deserialize)]
struct FeedbackBody {
    nudge_id: NudgeId,
    thumbs: Thumbs,
}

/// Records `{"nudge_id", "thumbs"}` feedback on a delivered nudge.
///
/// # Safety
/// Pointers are null or valid; strings are NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn nudge_session_feedback(
    engine: *const NudgeEngine,
    session_id: *const c_char,
    feedback_json: *const c_char,
    out_json: *mut *mut c_char,
) -> NudgeStatus {
    guard(out_json, || {
        let e = self::engine(engine)?;
        let fb: FeedbackBody = json(feedback_json, "feedback")?;
        encode(&e.submit_feedback(&session(session_id)?, &fb.nudge_id, fb.thumbs)?)
    })
}

/// UI context of the latest delivery; `NotFound` before any delivery.
///
/// # Safety
/// Pointers are null or valid; strings are NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn nudge_session_ui_context(
    engine: *const NudgeEngine,
    session_id: *const c_char,
    out_json: *mut *mut c_char,
) -> NudgeStatus {
    guard(out_json, || {
        let e = self::engine(engine)?;
        let ui = e.ui_context(&session(session_id)?)?;
        encode(&ui.ok_or_else(|| Failure(NudgeStatus::NotFound, "no nudge delivered in this session yet".into()))?)
    })
}

/// Explanation of the latest delivery; `NotFound` before any delivery.
///
/// # Safety
/// Pointers are null or valid; strings are NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn nudge_session_explanation(
    engine: *const NudgeEngine,
    session_id: *const c_char,
    out_json: *mut *mut c_char,
) -> NudgeStatus {
    guard(out_json, || {
        let e = self::engine(engine)?;
        let view = e.explanation(&session(session_id)?)?;
        encode(&view.ok_or_else(|| Failure(NudgeStatus::NotFound, "no nudge delivered in this session yet".into()))?)
    })
}

/// Trace records of one session, in sequence order.
///
/// # Safety
/// Pointers are null or valid; strings are NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn nudge_session_traces(
    engine: *const NudgeEngine,
    session_id: *const c_char,
    out_json: *mut *mut c_char,
) -> NudgeStatus {
    guard(out_json, || {
        let e = self::engine(engine)?;
        encode(&e.session_traces(&session(session_id)?)?)
    })
}

/// Fairness audit over every trace the engine holds. A NaN or non-positive
/// `threshold` uses the configured one.
///
/// # Safety
/// Pointers are null or valid; strings are NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn nudge_fairness(
    engine: *const NudgeEngine,
    group_by: *const c_char,
    threshold: f64,
    out_json: *mut *mut c_char,
) -> NudgeStatus {
    guard(out_json, || {
        let e = self::engine(engine)?;
        let t = (threshold.is_finite() && threshold > 0.0).then_some(threshold);
        encode(&e.fairness(text(group_by, "group_by")?, t)?)
    })
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn nudge_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Releases a string returned through an `out_json` parameter. Null is ignored.
///
/// # Safety
/// `s` is null or came from this library and is not used again.
#[no_mangle]
pub unsafe extern "C" fn nudge_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
