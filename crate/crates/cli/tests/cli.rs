use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lungview::pipeline::RunConfig;

fn lungview(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lungview"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = lungview(args);
    assert!(
        out.status.success(),
        "lungview {}: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small train / calibration / test datasets with disjoint seeds.
fn datasets(root: &Path) -> [PathBuf; 3] {
    let sets = [("train", 100, 6, 0), ("cal", 200, 4, 0), ("test", 300, 3, 3)];
    sets.map(|(name, seed, normal, abnormal)| {
        let dir = root.join(name);
        ok(&[
            "--seed",
            &seed.to_string(),
            "phantom",
            "--normal",
            &normal.to_string(),
            "--abnormal",
            &abnormal.to_string(),
            "--dims",
            "32,48,48",
            "--out",
            s(&dir),
        ]);
        dir.join("manifest.csv")
    })
}

/// Runs bank build → score → eval → localize and returns every output file
/// with its bytes, keyed by path relative to `out`.
fn chain(sets: &[PathBuf; 3], out: &Path, jobs: &str) -> Vec<(String, Vec<u8>)> {
    let [train, cal, test] = sets;
    let banks = out.join("banks");
    let scores = out.join("scores.csv");
    ok(&["--jobs", jobs, "bank", "build", "--manifest", s(train), "--calibration", s(cal), "--out", s(&banks)]);
    ok(&["--jobs", jobs, "score", "--manifest", s(test), "--banks", s(&banks), "--out", s(&scores)]);
    ok(&["--jobs", jobs, "eval", "--scores", s(&scores), "--out", s(&out.join("eval"))]);
    ok(&["--jobs", jobs, "localize", "--manifest", s(test), "--banks", s(&banks), "--out", s(&out.join("loc"))]);
    let mut files = Vec::new();
    collect(out, out, &mut files);
    files.sort();
    files
}

fn collect(root: &Path, dir: &Path, files: &mut Vec<(String, Vec<u8>)>) {
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            collect(root, &p, files);
        } else {
            let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
            files.push((rel, fs::read(&p).unwrap()));
        }
    }
}

#[test]
fn pipeline_outputs_are_byte_identical_across_runs_and_job_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let sets = datasets(tmp.path());
    let a = chain(&sets, &tmp.path().join("run1"), "1");
    let b = chain(&sets, &tmp.path().join("run2"), "3");

    let names: Vec<&str> = a.iter().map(|(n, _)| n.as_str()).collect();
    assert!(names.contains(&"scores.csv"));
    assert!(names.contains(&"eval/metrics.json"));
    assert!(names.contains(&"eval/roc.csv"));
    assert!(names.iter().filter(|n| n.ends_with("_v.mvol")).count() == 6);
    assert_eq!(a.len(), b.len());
    for ((na, ba), (nb, bb)) in a.iter().zip(&b) {
        assert_eq!(na, nb);
        assert!(ba == bb, "{na} differs between runs");
    }

    let metrics: serde_json::Value = serde_json::from_slice(&fs::read(tmp.path().join("run1/eval/metrics.json")).unwrap()).unwrap();
    for key in ["auc", "accuracy", "sensitivity", "specificity", "precision", "f1", "threshold", "folds"] {
        assert!(metrics.get(key).is_some(), "metrics lack {key}");
    }
    let header = fs::read_to_string(tmp.path().join("run1/scores.csv")).unwrap();
    assert!(header.starts_with("case_id,score,label,"));
}

#[test]
fn coronal_only_builds_two_banks_and_extractor_mismatch_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let sets = datasets(tmp.path());
    let [train, cal, test] = &sets;
    let banks = tmp.path().join("banks");
    ok(&[
        "--projection-set",
        "coronal-only",
        "bank",
        "build",
        "--manifest",
        s(train),
        "--calibration",
        s(cal),
        "--out",
        s(&banks),
    ]);
    let mut mbnk: Vec<String> = fs::read_dir(&banks)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".mbnk"))
        .collect();
    mbnk.sort();
    assert_eq!(mbnk, ["left_coronal.mbnk", "right_coronal.mbnk"]);

    let mut cfg = RunConfig {
        projection_set: lungview::projection::ProjectionSet::CoronalOnly,
        ..RunConfig::default()
    };
    cfg.extractor.stride = 8;
    let cfg_path = tmp.path().join("stride8.json");
    fs::write(&cfg_path, serde_json::to_vec(&cfg).unwrap()).unwrap();
    let out = lungview(&[
        "--config",
        s(&cfg_path),
        "score",
        "--manifest",
        s(test),
        "--banks",
        s(&banks),
        "--out",
        s(&tmp.path().join("scores.csv")),
    ]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("E_EXTRACTOR_MISMATCH"));
}

#[test]
fn bad_config_and_missing_inputs_have_distinct_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("bad.json");
    fs::write(&cfg_path, br#"{"q": 150}"#).unwrap();
    let bad_cfg = lungview(&["--config", s(&cfg_path), "segment-eval", "--manifest", "x.csv"]);
    let missing = lungview(&["segment-eval", "--manifest", s(&tmp.path().join("none.csv"))]);
    assert_eq!(bad_cfg.status.code(), Some(4));
    assert_eq!(missing.status.code(), Some(2));
}
