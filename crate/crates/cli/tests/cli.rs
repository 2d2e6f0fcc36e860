use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use canopy_cli::run::{Manifest, MANIFEST, REPORT_CSV, REPORT_JSON, SEGMENTED_CLOUD};
use canopy_cli::synth::{CLOUD_FILE, SPEC_FILE, TRUTH_FILE};
use canopy_core::eval::read_truth_csv;
use canopy_core::io::{read_cloud_with_properties, read_report_json};

fn canopy(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_canopy")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Small pistachio-like orchard: 2 rows of 5 well separated crowns.
fn synth_small(dir: &Path, seed: u64) -> PathBuf {
    let out = dir.join(format!("synth{seed}"));
    let o = canopy(&[
        "synth",
        "--out-dir",
        s(&out),
        "--points-per-tree",
        "8000",
        "--ground-points",
        "40000",
        "--seed",
        &seed.to_string(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

fn run_small(input: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", "--input", s(input), "--out-dir", s(out), "--min-points", "100"];
    args.extend_from_slice(extra);
    canopy(&args)
}

#[test]
fn run_pistachio_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let synth = synth_small(dir.path(), 1);
    let out = dir.path().join("run");
    let o = run_small(&synth.join(CLOUD_FILE), &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in [SEGMENTED_CLOUD, REPORT_JSON, REPORT_CSV, MANIFEST] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let reports = read_report_json(out.join(REPORT_JSON)).unwrap();
    assert_eq!(reports.len(), 10);

    let seg = read_cloud_with_properties(out.join(SEGMENTED_CLOUD), &["cluster"]).unwrap();
    let labels = seg.properties[0].as_ref().unwrap();
    let max = labels.iter().copied().max().unwrap();
    assert_eq!(max, 9);

    let csv = std::fs::read_to_string(out.join(REPORT_CSV)).unwrap();
    assert_eq!(csv.lines().count(), 11);

    let m: Manifest = serde_json::from_slice(&std::fs::read(out.join(MANIFEST)).unwrap()).unwrap();
    assert_eq!(m.segmentation.as_ref().unwrap().success_rate, 1.0);
}

#[test]
fn manifest_echo_and_timings() {
    let dir = tempfile::tempdir().unwrap();
    let synth = synth_small(dir.path(), 2);
    let conf = dir.path().join("run.conf");
    let out = dir.path().join("run");
    std::fs::write(
        &conf,
        format!("input = {}\nout-dir = {}\nmin-points = 100\nalpha = 0.7\n", s(&synth.join(CLOUD_FILE)), s(&out)),
    )
    .unwrap();
    let o = canopy(&["run", "--config", s(&conf), "--seed", "9"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m: Manifest = serde_json::from_slice(&std::fs::read(out.join(MANIFEST)).unwrap()).unwrap();

    let cfg = m.config().unwrap();
    assert_eq!(cfg.alpha, 0.7);
    assert_eq!(cfg.seed, 9);
    assert_eq!(cfg.min_points, 100);
    // echo -> text -> reload is a fixed point
    let reloaded = canopy_cli::config::PipelineConfig::parse_text(&cfg.render(), "echo").unwrap();
    assert_eq!(reloaded, cfg);

    let stages: Vec<&str> = m.timings.iter().map(|t| t.stage.name()).collect();
    assert_eq!(stages, ["read", "preprocess", "downsample", "segment", "layout", "volumes", "reports", "write"]);
    let sum: f64 = m.timings.iter().map(|t| t.seconds).sum();
    assert!((sum - m.wall_seconds).abs() <= 0.05 * m.wall_seconds, "stages {sum} vs wall {}", m.wall_seconds);
}

#[test]
fn negative_epsilon_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = canopy(&["run", "--input", "x.ply", "--out-dir", s(dir.path()), "--epsilon", "-1"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("epsilon"), "{err}");
    assert!(err.contains("config"), "{err}");
}

#[test]
fn missing_input_names_read_stage() {
    let dir = tempfile::tempdir().unwrap();
    let o = canopy(&["run", "--input", s(&dir.path().join("nope.ply")), "--out-dir", s(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("`read`"), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("bad.conf");
    std::fs::write(&conf, "epsilon = 0.8\nminpoints = 3\n").unwrap();
    let o = canopy(&["run", "--config", s(&conf)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("minpoints"));
}

#[test]
fn repeated_runs_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let synth = synth_small(dir.path(), 3);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(run_small(&synth.join(CLOUD_FILE), &a, &[]).status.success());
    assert!(run_small(&synth.join(CLOUD_FILE), &b, &[]).status.success());
    for f in [REPORT_JSON, REPORT_CSV, SEGMENTED_CLOUD] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn degenerate_tree_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    // ground grid, one flat canopy patch and one solid crown
    let mut text = String::new();
    for i in 0..60 {
        for j in 0..60 {
            text.push_str(&format!("{} {} 0\n", i as f64 * 0.25, j as f64 * 0.25));
        }
    }
    for i in 0..20 {
        for j in 0..20 {
            text.push_str(&format!("{} {} 3\n", 1.0 + i as f64 * 0.05, 1.0 + j as f64 * 0.05));
        }
    }
    for i in 0..12 {
        for j in 0..12 {
            for k in 0..12 {
                text.push_str(&format!("{} {} {}\n", 8.0 + i as f64 * 0.1, 8.0 + j as f64 * 0.1, 3.0 + k as f64 * 0.1));
            }
        }
    }
    let input = dir.path().join("scene.xyz");
    std::fs::write(&input, text).unwrap();
    let out = dir.path().join("run");
    let o = canopy(&["run", "--input", s(&input), "--out-dir", s(&out), "--min-points", "5", "--epsilon", "0.3"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let reports = read_report_json(out.join(REPORT_JSON)).unwrap();
    assert_eq!(reports.len(), 2);
    assert_eq!(reports.iter().filter(|r| r.degenerate).count(), 1);
    assert!(stderr(&o).contains("degenerate"));
}

#[test]
fn synth_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth_small(dir.path(), 4);
    for f in [CLOUD_FILE, TRUTH_FILE, SPEC_FILE] {
        assert!(a.join(f).is_file());
    }
    let cloud = read_cloud_with_properties(a.join(CLOUD_FILE), &["tree", "part"]).unwrap();
    assert_eq!(cloud.cloud.len(), 10 * (8000 + 400) + 40000);
    assert!(cloud.properties.iter().all(Option::is_some));
    assert_eq!(read_truth_csv(a.join(TRUTH_FILE)).unwrap().len(), 10);

    let again = dir.path().join("again");
    std::fs::rename(&a, &again).unwrap();
    let b = synth_small(dir.path(), 4);
    for f in [CLOUD_FILE, TRUTH_FILE] {
        assert_eq!(std::fs::read(again.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let c = synth_small(dir.path(), 5);
    assert_ne!(std::fs::read(b.join(CLOUD_FILE)).unwrap(), std::fs::read(c.join(CLOUD_FILE)).unwrap());
}

#[test]
fn synth_default_spec() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    let o = canopy(&["synth", "--out-dir", s(&out), "--format", "ply_ascii"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cloud = canopy_core::io::read_cloud(out.join(CLOUD_FILE)).unwrap();
    assert!(!cloud.is_empty());
    assert_eq!(read_truth_csv(out.join(TRUTH_FILE)).unwrap().len(), 2 * 5);
}

#[test]
fn synth_rejects_bad_overlap() {
    let dir = tempfile::tempdir().unwrap();
    let o = canopy(&["synth", "--out-dir", s(dir.path()), "--overlap", "1.0"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn eval_join_and_failure() {
    let dir = tempfile::tempdir().unwrap();
    let synth = synth_small(dir.path(), 6);
    let out = dir.path().join("run");
    assert!(run_small(&synth.join(CLOUD_FILE), &out, &[]).status.success());
    let summary = dir.path().join("eval/summary.json");
    let o = canopy(&[
        "eval",
        "--report",
        s(&out.join(REPORT_JSON)),
        "--truth",
        s(&synth.join(TRUTH_FILE)),
        "--out",
        s(&summary),
        "--manifest",
        s(&out.join(MANIFEST)),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let table = String::from_utf8(o.stdout).unwrap();
    assert!(table.contains("convex err %"));
    assert_eq!(table.lines().filter(|l| l.starts_with("L_") || l.starts_with("R_")).count(), 10);
    let parsed: canopy_core::eval::EvaluationSummary = serde_json::from_slice(&std::fs::read(&summary).unwrap()).unwrap();
    assert_eq!(parsed.volumes.len(), 10);
    assert!(parsed.segmentation.is_some());

    // drop the last tree of the L row so the other labels stay put
    let truth = std::fs::read_to_string(synth.join(TRUTH_FILE)).unwrap();
    let mut lines: Vec<&str> = truth.lines().collect();
    let header = lines.remove(0);
    let kept: Vec<&str> = lines.into_iter().filter(|l| !l.starts_with("9,")).collect();
    let short = dir.path().join("short.csv");
    std::fs::write(&short, format!("{header}\n{}\n", kept.join("\n"))).unwrap();
    let o = canopy(&["eval", "--report", s(&out.join(REPORT_JSON)), "--truth", s(&short), "--out", s(&summary)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("L_4"), "{}", stderr(&o));
}
