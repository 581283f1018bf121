//! Compiles a small C program against the generated header and the static
//! library, then runs it.

use std::path::PathBuf;
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include <string.h>
#include "nudge_engine.h"

int main(void) {
    NudgeEngine *e = NULL;
    char *out = NULL;
    if (nudge_engine_new(NULL, &e) != NUDGE_STATUS_OK) return 1;
    if (nudge_session_create(e, "{\"session_id\":\"c-1\"}", &out) != NUDGE_STATUS_OK) return 2;
    if (strstr(out, "c-1") == NULL) return 3;
    nudge_string_free(out);
    if (nudge_session_run(e, "c-1", NULL, &out) != NUDGE_STATUS_OK) return 4;
    if (strstr(out, "insufficient_data") == NULL) return 5;
    nudge_string_free(out);
    if (nudge_session_run(e, "nope", NULL, &out) != NUDGE_STATUS_NOT_FOUND) return 6;
    if (strlen(nudge_last_error_message()) == 0) return 7;
    nudge_engine_free(e);
    puts("ok");
    return 0;
}
"#;

fn target_dir() -> PathBuf {
    // tests run from target/<profile>/deps
    std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_and_runs() {
    let lib = target_dir().join("libnudge_ffi.a");
    assert!(lib.exists(), "{} not built", lib.display());
    let dir = tempfile_dir();
    let src = dir.join("smoke.c");
    let bin = dir.join("smoke");
    std::fs::write(&src, PROGRAM).unwrap();
    let include = concat!(env!("CARGO_MANIFEST_DIR"), "/include");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(include)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .expect("a C compiler on PATH");
    assert!(status.success(), "compile failed");
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "ok");
}

fn tempfile_dir() -> PathBuf {
    let d = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("c_smoke");
    std::fs::create_dir_all(&d).unwrap();
    d
}
