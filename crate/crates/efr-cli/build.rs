//! Embeds a git-describe-style build identifier so run manifests can name
//! the exact build that produced them.

use std::process::Command;

fn main() {
    let id = Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|out| out.status.success())
        .map(|out| String::from_utf8_lossy(&out.stdout).trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".to_string());
    println!("cargo:rustc-env=EFR_BUILD_ID={id}");
    println!("cargo:rerun-if-changed=../../.git/HEAD");
}
