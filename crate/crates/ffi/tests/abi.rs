use std::ffi::{c_char, CStr, CString};
use std::ptr;

use nudge_ffi::*;

struct Handle(*mut NudgeEngine);

impl Drop for Handle {
    fn drop(&mut self) {
        unsafe { nudge_engine_free(self.0) };
    }
}

fn engine() -> Handle {
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { nudge_engine_new(ptr::null(), &mut h) }, NudgeStatus::Ok);
    assert!(!h.is_null());
    Handle(h)
}

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn take(p: *mut c_char) -> serde_json::Value {
    assert!(!p.is_null());
    let s = unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string();
    unsafe { nudge_string_free(p) };
    serde_json::from_str(&s).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(nudge_last_error_message()) }.to_str().unwrap().to_string()
}

const EVENTS: &str = r#"[
  {"session_id":"ffi-1","kind":"page_focus","at":"2025-03-03T09:30:00Z"},
  {"session_id":"ffi-1","kind":"appliance_action","at":"2025-03-03T09:30:02Z",
   "attributes":{"appliance_id":"heater","wattage_w":2000,"usage_hours":4,"action":"add"}},
  {"session_id":"ffi-1","kind":"click","at":"2025-03-03T09:30:03Z"},
  {"session_id":"ffi-1","kind":"click","at":"2025-03-03T09:30:04Z"},
  {"session_id":"ffi-1","kind":"click","at":"2025-03-03T09:30:05Z"},
  {"session_id":"ffi-1","kind":"click","at":"2025-03-03T09:30:06Z"},
  {"session_id":"ffi-1","kind":"appliance_action","at":"2025-03-03T09:30:08Z",
   "attributes":{"appliance_id":"heater","wattage_w":2000,"usage_hours":4,"action":"view"}}
]"#;

#[test]
fn full_session_through_the_c_abi() {
    let h = engine();
    let mut out = ptr::null_mut();
    let sid = c("ffi-1");
    unsafe {
        assert_eq!(nudge_session_create(h.0, c(r#"{"session_id":"ffi-1"}"#).as_ptr(), &mut out), NudgeStatus::Ok);
        assert_eq!(take(out)["session_id"], "ffi-1");
        let ctx = c(r#"{"device":"desktop","at":"2025-03-03T09:30:00Z","utc_offset_minutes":0}"#);
        assert_eq!(nudge_session_context(h.0, sid.as_ptr(), ctx.as_ptr(), &mut out), NudgeStatus::Ok);
        take(out);
        assert_eq!(nudge_session_events(h.0, sid.as_ptr(), c(EVENTS).as_ptr(), &mut out), NudgeStatus::Ok);
        assert_eq!(take(out)["events"], 7);
        assert_eq!(nudge_session_run(h.0, sid.as_ptr(), ptr::null(), &mut out), NudgeStatus::Ok);
        let outcome = take(out);
        assert_eq!(outcome["kind"], "delivered", "{outcome}");
        assert_eq!(outcome["delivery"]["strategy_id"], "enable_comparisons");
        let nudge_id = outcome["delivery"]["nudge_id"].as_str().unwrap().to_string();

        assert_eq!(nudge_session_ui_context(h.0, sid.as_ptr(), &mut out), NudgeStatus::Ok);
        assert_eq!(take(out)["font_size_px"], 16);
        assert_eq!(nudge_session_explanation(h.0, sid.as_ptr(), &mut out), NudgeStatus::Ok);
        assert!(take(out)["explanation"].as_str().unwrap().contains("enable_comparisons"));

        let fb = c(&format!(r#"{{"nudge_id":"{nudge_id}","thumbs":"up"}}"#));
        assert_eq!(nudge_session_feedback(h.0, sid.as_ptr(), fb.as_ptr(), &mut out), NudgeStatus::Ok);
        assert_eq!(take(out)["duplicate"], false);

        assert_eq!(nudge_session_traces(h.0, sid.as_ptr(), &mut out), NudgeStatus::Ok);
        let traces = take(out);
        let seqs: Vec<u64> = traces.as_array().unwrap().iter().map(|r| r["seq"].as_u64().unwrap()).collect();
        assert_eq!(seqs, (1..=seqs.len() as u64).collect::<Vec<_>>());

        assert_eq!(nudge_fairness(h.0, c("device").as_ptr(), f64::NAN, &mut out), NudgeStatus::Ok);
        assert_eq!(take(out)["flagged"], false);
    }
    assert_eq!(last_error(), "");
}

#[test]
fn errors_map_to_status_codes() {
    let h = engine();
    let mut out = ptr::null_mut();
    unsafe {
        assert_eq!(nudge_session_run(ptr::null(), c("x").as_ptr(), ptr::null(), &mut out), NudgeStatus::NullPointer);
        assert!(out.is_null());
        assert_eq!(nudge_session_run(h.0, c("missing").as_ptr(), ptr::null(), &mut out), NudgeStatus::NotFound);
        assert!(last_error().contains("missing"));
        assert_eq!(nudge_session_create(h.0, c("{not json").as_ptr(), &mut out), NudgeStatus::InvalidJson);
        assert_eq!(nudge_session_create(h.0, c(r#"{"session_id":"../etc"}"#).as_ptr(), &mut out), NudgeStatus::Rejected);
        let bad_utf8 = [0xffu8, 0xfe, 0];
        assert_eq!(
            nudge_session_run(h.0, bad_utf8.as_ptr() as *const c_char, ptr::null(), &mut out),
            NudgeStatus::InvalidUtf8
        );
        assert_eq!(nudge_session_create(h.0, c(r#"{"session_id":"dup"}"#).as_ptr(), &mut out), NudgeStatus::Ok);
        take(out);
        assert_eq!(nudge_session_create(h.0, c(r#"{"session_id":"dup"}"#).as_ptr(), &mut out), NudgeStatus::Rejected);
        assert_eq!(nudge_session_ui_context(h.0, c("dup").as_ptr(), &mut out), NudgeStatus::NotFound);
        assert!(out.is_null());
        nudge_string_free(ptr::null_mut());
        nudge_engine_free(ptr::null_mut());
    }
}

#[test]
fn header_declares_the_abi() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/nudge_engine.h")).unwrap();
    for name in [
        "typedef struct NudgeEngine NudgeEngine",
        "NUDGE_STATUS_OK = 0",
        "NUDGE_STATUS_INTERNAL = 6",
        "nudge_engine_new(",
        "nudge_engine_free(",
        "nudge_session_create(",
        "nudge_session_context(",
        "nudge_session_events(",
        "nudge_session_emotion(",
        "nudge_session_run(",
        "nudge_session_feedback(",
        "nudge_session_ui_context(",
        "nudge_session_explanation(",
        "nudge_session_traces(",
        "nudge_fairness(",
        "nudge_last_error_message(",
        "nudge_string_free(",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}
