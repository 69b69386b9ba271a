use std::path::{Path, PathBuf};
use std::process::Command;

fn crate_dir() -> &'static Path {
    Path::new(env!("CARGO_MANIFEST_DIR"))
}

fn header() -> String {
    std::fs::read_to_string(crate_dir().join("include/kronc.h")).expect("build script writes the header")
}

/// The static library cargo built next to this test binary.
fn static_lib() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    let deps = exe.parent().unwrap();
    [deps, deps.parent().unwrap()]
        .iter()
        .map(|d| d.join("libkronc_ffi.a"))
        .find(|p| p.exists())
        .expect("libkronc_ffi.a next to the test binary")
}

#[test]
fn header_declares_the_whole_surface() {
    let h = header();
    for name in [
        "kronc_last_error",
        "kronc_synth",
        "kronc_scene_from_json",
        "kronc_scene_to_json",
        "kronc_string_free",
        "kronc_scene_clone",
        "kronc_scene_free",
        "kronc_scene_counts",
        "kronc_scene_get_pose",
        "kronc_scene_perturb",
        "kronc_scene_init_depths",
        "kronc_scene_total_loss",
        "kronc_optimize_options_default",
        "kronc_optimize",
        "kronc_pose_errors",
        "typedef struct KroncScene KroncScene;",
        "KRONC_STATUS_OK = 0",
        "KRONC_STATUS_PANIC",
    ] {
        assert!(h.contains(name), "header lacks {name}");
    }
    assert!(h.starts_with("#ifndef KRONC_H"));
}

#[test]
fn c_program_builds_and_runs() {
    let out_dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR"));
    let exe = out_dir.join("kronc_smoke");
    let status = Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(crate_dir().join("include"))
        .arg(crate_dir().join("tests/c/smoke.c"))
        .arg(static_lib())
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("a C compiler named cc");
    assert!(status.success(), "C compilation failed");

    let run = Command::new(&exe).output().unwrap();
    assert!(
        run.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&run.stdout),
        String::from_utf8_lossy(&run.stderr)
    );
}
