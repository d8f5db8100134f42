//! Builds a small C program against the generated header and the static
//! library, then runs it.

use std::path::{Path, PathBuf};
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include <string.h>
#include "ztflow.h"

int main(int argc, char **argv) {
    (void)argc;
    FILE *f = fopen(argv[1], "rb");
    if (!f) return 10;
    static char workflow[1 << 16];
    size_t n = fread(workflow, 1, sizeof workflow - 1, f);
    fclose(f);
    workflow[n] = 0;

    ZtPolicy *policy = NULL;
    if (zt_policy_compile(workflow, "POST", "/api/{dst}", &policy) != ZT_STATUS_OK) return 11;
    ZtVerdict v;
    char *reason = NULL;
    if (zt_policy_evaluate(policy, "owner", "POST", "/api/vfx-1", 8, &v, &reason) != ZT_STATUS_OK) return 12;
    if (v != ZT_VERDICT_ALLOW) return 13;
    zt_string_free(reason);
    if (zt_policy_evaluate(policy, "owner", "GET", "/api/vfx-1", 8, &v, NULL) != ZT_STATUS_OK) return 14;
    if (v != ZT_VERDICT_DENY) return 15;

    char *report = NULL;
    if (zt_verify_sweep(workflow, policy, "/api/{dst}", NULL, NULL, 1, &report) != ZT_STATUS_OK) return 16;
    if (!strstr(report, "\"compliant\"")) return 17;
    zt_string_free(report);

    ZtPolicy *bad = NULL;
    if (zt_policy_from_json("[]", &bad) != ZT_STATUS_PARSE || zt_last_error() == NULL) return 18;

    printf("%llu\n", (unsigned long long)zt_required_capture_count(7, 2));
    zt_policy_free(policy);
    return 0;
}
"#;

/// The archive built alongside this test binary. `cargo test` refreshes the
/// copy in `deps/` but only `cargo build` updates the one a level up.
fn static_lib() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().join("libztflow_ffi.a")
}

fn have_cc() -> bool {
    Command::new("cc").arg("--version").output().is_ok_and(|o| o.status.success())
}

#[test]
fn c_program_links_and_runs() {
    let lib = static_lib();
    if !have_cc() || !lib.exists() {
        eprintln!("skipping: no C compiler or {} missing", lib.display());
        return;
    }
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let work = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("c_header");
    std::fs::create_dir_all(&work).unwrap();
    let src = work.join("smoke.c");
    let bin = work.join("smoke");
    std::fs::write(&src, PROGRAM).unwrap();
    let status = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Wextra", "-Werror", "-o"])
        .arg(&bin)
        .arg(&src)
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .status()
        .unwrap();
    assert!(status.success(), "C build failed");
    let out = Command::new(&bin).arg(manifest.join("../../fixtures/poc_workflow.json")).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "1176");
}
