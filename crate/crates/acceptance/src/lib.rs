//! Locating the `bforest` binary from an integration test of another package.

use std::path::PathBuf;
use std::process::Command;

/// Path of the workspace `bforest` binary, building it first if needed.
pub fn bforest_exe() -> PathBuf {
    let exe = std::env::current_exe().expect("test executable path");
    // target/<profile>/deps/<test> -> target/<profile>/bforest
    let profile_dir = exe.parent().and_then(|d| d.parent()).expect("target profile dir");
    let bin = profile_dir.join(format!("bforest{}", std::env::consts::EXE_SUFFIX));
    let mut cmd = Command::new(env!("CARGO"));
    cmd.args(["build", "--quiet", "-p", "bayes-forest-cli", "--bin", "bforest"]);
    if profile_dir.ends_with("release") {
        cmd.arg("--release");
    }
    let status = cmd
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .status()
        .expect("run cargo build");
    assert!(status.success(), "building bforest failed");
    assert!(bin.exists(), "{} missing after build", bin.display());
    bin
}
