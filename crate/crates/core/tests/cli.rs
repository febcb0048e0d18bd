use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bpl_core::io::{parse_key_values, parse_tsv, read_scan};

const BIN: &str = env!("CARGO_BIN_EXE_bpl");

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn bpl(args: &[&str], env_seed: Option<&str>) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args).env_remove("BPL_SEED");
    if let Some(s) = env_seed {
        cmd.env("BPL_SEED", s);
    }
    cmd.output().unwrap()
}

fn run_ok(args: &[&str]) -> Output {
    let out = bpl(args, None);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut all = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                all.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    all.sort();
    all
}

fn out_arg(dir: &Path) -> String {
    dir.to_str().unwrap().to_string()
}

#[test]
fn pipeline_is_byte_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let cfg = fixture("qubit.cfg");
    for dir in [&a, &b] {
        run_ok(&["pipeline", cfg.to_str().unwrap(), "--seed", "17", "--out", &out_arg(dir)]);
    }
    let (fa, fb) = (files(&a), files(&b));
    assert!(fa.len() >= 7);
    assert_eq!(fa, fb);
}

#[test]
fn seed_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = fixture("qubit.cfg");
    let scan = |dir: &Path| fs::read_to_string(dir.join("scans/image_fixed_0.tsv")).unwrap();
    let run = |name: &str, flag: Option<&str>, env: Option<&str>| {
        let dir = tmp.path().join(name);
        let mut args = vec!["simulate-image", "--config", cfg.to_str().unwrap()];
        let o = out_arg(&dir);
        args.extend(["--out", o.as_str()]);
        if let Some(f) = flag {
            args.extend(["--seed", f]);
        }
        assert!(bpl(&args, env).status.success());
        scan(&dir)
    };
    let by_flag = run("flag", Some("5"), Some("6"));
    let by_env = run("env", None, Some("5"));
    let from_cfg = run("cfg", None, None);
    assert_eq!(by_flag, by_env);
    assert!(by_flag.contains("# seed = "));
    assert_ne!(by_flag, from_cfg);
}

#[test]
fn outputs_reingest_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = fixture("qutrit.cfg");
    let out = tmp.path().join("run");
    run_ok(&["pipeline", "--config", cfg.to_str().unwrap(), "--out", &out_arg(&out)]);
    for (rel, _) in files(&out) {
        let path = out.join(&rel);
        let text = fs::read_to_string(&path).unwrap();
        if rel.starts_with("scans") {
            let parsed = read_scan(&path).unwrap();
            assert!(parsed.warnings.is_empty(), "{rel:?}: {:?}", parsed.warnings);
        } else if rel.extension().is_some_and(|e| e == "tsv") {
            let (_, rows) = parse_tsv(&text, &path).unwrap();
            assert!(!rows.is_empty(), "{rel:?}");
        } else {
            parse_key_values(&text, &path).unwrap();
        }
    }
    // analyze and report accept the written scans
    run_ok(&["analyze", "--config", cfg.to_str().unwrap(), "--out", &out_arg(&out)]);
    let report = run_ok(&["report", "--config", cfg.to_str().unwrap(), "--out", &out_arg(&out)]);
    let text = String::from_utf8(report.stdout).unwrap();
    let kv = parse_key_values(&text, Path::new("stdout")).unwrap();
    let c: f64 = kv.iter().find(|(k, _)| k == "concurrence").unwrap().1.parse().unwrap();
    assert!((c - 1.0).abs() < 1e-3, "{c}");
}

#[test]
fn analyze_empty_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let cfg = fixture("qubit.cfg");
    let out = bpl(&["analyze", "--config", cfg.to_str().unwrap(), "--scans", empty.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no scans found"));
}

#[test]
fn config_errors_exit_3_and_name_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.cfg");
    let text = fs::read_to_string(fixture("qubit.cfg")).unwrap().replace("d = 1 mm", "d = -1 mm");
    fs::write(&bad, text).unwrap();
    let out = bpl(&["pipeline", bad.to_str().unwrap(), "--out", &out_arg(&tmp.path().join("o"))], None);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.cfg") && err.contains("d must be positive"), "{err}");

    let missing = bpl(&["pipeline", "/nonexistent/x.cfg"], None);
    assert_eq!(missing.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("/nonexistent/x.cfg"));
}

#[test]
fn malformed_scan_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let scans = tmp.path().join("scans");
    fs::create_dir(&scans).unwrap();
    fs::write(scans.join("broken.tsv"), "# plane = image\nposition_mm\tcoincidences\n0.0\t1\n").unwrap();
    let cfg = fixture("qubit.cfg");
    let out = bpl(&["analyze", "--config", cfg.to_str().unwrap(), "--scans", scans.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("broken.tsv"));
}

#[test]
fn usage_errors_and_help() {
    assert_eq!(bpl(&[], None).status.code(), Some(2));
    assert_eq!(bpl(&["pipeline", "--format", "csv", "x.cfg"], None).status.code(), Some(2));
    assert_eq!(bpl(&["pipeline"], None).status.code(), Some(2));
    let help = bpl(&["--help"], None);
    assert_eq!(help.status.code(), Some(0));
    let text = String::from_utf8_lossy(&help.stdout);
    assert!(text.contains("Exit codes") && text.contains("5  convergence"));
}

#[test]
fn single_path_fourier_scan_has_no_fringes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("one.cfg");
    let text = fs::read_to_string(fixture("qubit.cfg")).unwrap();
    let text: String = text
        .lines()
        .filter(|l| !l.starts_with("element"))
        .map(|l| match l {
            "dimension = 2" => "dimension = 1\n".to_string(),
            "[pbg]" => "[pbg]\namplitudes = 1\n".to_string(),
            other => format!("{other}\n"),
        })
        .collect();
    fs::write(&cfg, text).unwrap();
    let out = tmp.path().join("o");
    run_ok(&["simulate-fourier", cfg.to_str().unwrap(), "--out", &out_arg(&out)]);
    run_ok(&["analyze", cfg.to_str().unwrap(), "--out", &out_arg(&out)]);
    let fringes = fs::read_to_string(out.join("fringes.txt")).unwrap();
    assert_eq!(fringes.trim(), "fourier_fixed_0.error = no fringes detected");
}
