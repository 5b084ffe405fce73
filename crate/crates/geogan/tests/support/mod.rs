#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

/// Runs the `geogan` binary with `args`.
pub fn geogan<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geogan"))
        .args(args)
        .output()
        .expect("spawn geogan")
}

/// Like [`geogan`], but panics with the captured streams on a non-zero exit.
pub fn geogan_ok<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> String {
    let out = geogan(args);
    if !out.status.success() {
        panic!(
            "geogan {:?} exited with {:?}\nstdout:\n{}\nstderr:\n{}",
            args.iter()
                .map(|a| a.as_ref().to_string_lossy().into_owned())
                .collect::<Vec<_>>(),
            out.status.code(),
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        );
    }
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn hash(path: &Path) -> String {
    geogan::manifest::sha256_file(path).unwrap()
}

pub fn p(path: &Path) -> String {
    path.display().to_string()
}
