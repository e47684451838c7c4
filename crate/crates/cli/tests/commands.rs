use std::path::Path;
use std::process::{Command, Output};

fn rehash(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rehash")).current_dir(dir).args(args).output().expect("spawn rehash")
}

fn gen_grid(dir: &Path) {
    let out = rehash(dir, &["gen-data", "--kind", "grid", "--d", "2", "--m", "4", "--side", "2", "--out", "grid.txt"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(rehash(dir.path(), &["train", "--out", "model.txt"]).status.code(), Some(2));
    assert_eq!(rehash(dir.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(rehash(dir.path(), &["sample", "--sampler", "rehash", "--out", "x.csv"]).status.code(), Some(2));
}

#[test]
fn help_and_version_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(rehash(dir.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(rehash(dir.path(), &["--version"]).status.code(), Some(0));
}

#[test]
fn kernel_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = rehash(dir.path(), &["kernel-check", "--trials", "50", "--seed", "3"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.matches("PASS").count(), 4, "{text}");
    assert!(!text.contains("FAIL"));
}

#[test]
fn sampling_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    gen_grid(dir.path());
    let common = ["sample", "--dataset", "grid.txt", "--sampler", "rehash", "--steps", "8", "--seed", "7", "--num-samples", "200"];
    for name in ["a.csv", "b.csv"] {
        let out = rehash(dir.path(), &[&common[..], &["--out", name]].concat());
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = std::fs::read(dir.path().join("a.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b.csv")).unwrap();
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().next(), Some("p0,p1,p2,p3"));
    assert_eq!(text.lines().count(), 201);
    assert!(dir.path().join("a.csv.manifest.json").exists());
}

#[test]
fn grid_export_is_a_pgm() {
    let dir = tempfile::tempdir().unwrap();
    gen_grid(dir.path());
    let out = rehash(
        dir.path(),
        &["sample", "--dataset", "grid.txt", "--sampler", "mvtm", "--num-samples", "9", "--out", "s.csv", "--grid", "s.pgm"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let pgm = std::fs::read(dir.path().join("s.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5"));
}
