//! The command-line tool: determinism of generated files and exit codes.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mtplab(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mtplab")).args(args).current_dir(cwd).env_remove("MTPLAB_OUT").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

#[test]
fn generated_files_are_byte_identical() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    for out in ["a.json", "b.json"] {
        assert_eq!(code(&mtplab(&["gen-graph", "--kind", "usg", "--n", "20", "--rho", "0.3", "--seed", "5", "--out", out], p)), 0);
    }
    assert_eq!(fs::read(p.join("a.json")).unwrap(), fs::read(p.join("b.json")).unwrap());
    assert_eq!(code(&mtplab(&["gen-graph", "--kind", "usg", "--n", "20", "--rho", "0.3", "--seed", "6", "--out", "c.json"], p)), 0);
    assert_ne!(fs::read(p.join("a.json")).unwrap(), fs::read(p.join("c.json")).unwrap());

    for out in ["a.jsonl", "b.jsonl"] {
        assert_eq!(code(&mtplab(&["gen-corpus", "--graph", "a.json", "--seed", "1", "--out", out], p)), 0);
    }
    assert_eq!(fs::read(p.join("a.jsonl")).unwrap(), fs::read(p.join("b.jsonl")).unwrap());
}

#[test]
fn errors_map_to_distinct_exit_codes() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    assert_eq!(code(&mtplab(&["gen-graph", "--kind", "nope", "--n", "5"], p)), 2);
    assert_eq!(code(&mtplab(&["gen-corpus", "--graph", "missing.json"], p)), 3);

    mtplab(&["gen-graph", "--kind", "usg", "--n", "12", "--rho", "0.3", "--seed", "1", "--out", "g1.json"], p);
    mtplab(&["gen-graph", "--kind", "usg", "--n", "12", "--rho", "0.3", "--seed", "2", "--out", "g2.json"], p);
    mtplab(&["gen-corpus", "--graph", "g1.json", "--out", "c1.jsonl"], p);
    let o = mtplab(&["--preset", "ci", "train", "--corpus", "c1.jsonl", "--graph", "g2.json", "--iters", "2"], p);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));

    fs::write(p.join("bad.toml"), "name = \"x\"\nbogus = 1\n").unwrap();
    assert_eq!(code(&mtplab(&["--config", "bad.toml", "bench"], p)), 5);
    assert_eq!(code(&mtplab(&["report", "--root", "nowhere"], p)), 3);
}

#[test]
fn linlab_writes_its_grid() {
    let d = tempfile::tempdir().unwrap();
    let o = mtplab(&["linlab", "--steps", "50", "--out", "ll"], d.path());
    assert_eq!(code(&o), 0);
    let grid = fs::read_to_string(d.path().join("ll").join("grid.csv")).unwrap();
    assert_eq!(grid.lines().count(), 7);
    assert!(grid.lines().skip(1).all(|l| l.split(',').nth(7) == Some("0")));
}
