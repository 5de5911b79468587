//! Acceptance suite, command-line side.
//!
//! Criterion 6 lives here because it exercises the installed binary end to
//! end; the numerical and statistical criteria live in the core crate's
//! acceptance tests.

use std::collections::BTreeMap;
use std::panic::AssertUnwindSafe;
use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_rcnnsim")
}

fn report(n: usize, desc: &str, f: impl FnOnce()) {
    match std::panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(()) => println!("acceptance criterion {n:02} ({desc}): PASS"),
        Err(e) => {
            println!("acceptance criterion {n:02} ({desc}): FAIL");
            std::panic::resume_unwind(e);
        }
    }
}

/// Runs one subcommand with the working directory pinned so every path in
/// the run, including the echoed configuration, stays relative.
fn run_in(dir: &Path, cmd: &str, extra: &[&str]) {
    let output = Command::new(bin())
        .current_dir(dir)
        .arg(cmd)
        .args(["--out", "out", "--seed", "11"])
        .args(extra)
        .output()
        .expect("spawning pipeline binary");
    assert!(
        output.status.success(),
        "{cmd} failed:\n{}",
        String::from_utf8_lossy(&output.stderr)
    );
}

fn full_pipeline(dir: &Path) {
    run_in(dir, "gen-ti", &[]);
    run_in(dir, "sample", &[]);
    run_in(
        dir,
        "train",
        &[
            "--set",
            "train.crop=[16,16,16]",
            "--set",
            "train.n_cnns=2",
            "--set",
            "train.conv_maps=[2,2]",
            "--set",
            "train.pool_after=[false,true]",
            "--set",
            "train.fc_hidden=[16]",
            "--set",
            "train.window={ sg = [7,7,7], ip = [3,3,3] }",
            "--set",
            "train.epochs=2",
            "--set",
            "train.pairs_per_epoch=64",
            "--set",
            "train.batch_size=16",
            "--set",
            "train.early_stop=false",
        ],
    );
    run_in(
        dir,
        "simulate",
        &[
            "--set",
            "simulate.dims=[16,16,16]",
            "--set",
            "simulate.realizations=2",
        ],
    );
    run_in(dir, "metrics", &[]);
}

/// Maps every file under `root` to its contents, keyed by relative path.
fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_path_buf();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

#[test]
fn criterion_06_pipeline_determinism() {
    report(6, "full pipeline rerun is bit-identical", || {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        full_pipeline(a.path());
        full_pipeline(b.path());

        let sa = snapshot(&a.path().join("out"));
        let sb = snapshot(&b.path().join("out"));
        assert!(!sa.is_empty());
        let names_a: Vec<_> = sa.keys().collect();
        let names_b: Vec<_> = sb.keys().collect();
        assert_eq!(names_a, names_b, "file sets differ");
        for (name, bytes) in &sa {
            assert_eq!(bytes, &sb[name], "{} differs between reruns", name.display());
        }
    });
}
