use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn earn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_earn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = earn(args);
    assert!(
        out.status.success(),
        "earn {} failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Synthetic pool in a fresh directory; returns the directory and manifest.
fn pool(models: usize) -> (TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("pool");
    let m = models.to_string();
    let manifest = ok(&[
        "pool", "synth", "--models", &m, "--samples", "150", "--classes", "4", "--seed", "5", "-o", s(&out),
    ]);
    (dir, PathBuf::from(manifest.trim()))
}

fn small_search(manifest: &Path, out: &Path, extra: &[&str]) {
    let mut args = vec![
        "search",
        "--pool",
        s(manifest),
        "--population-limit",
        "30",
        "--offspring-limit",
        "15",
        "--iterations",
        "6",
        "-o",
        s(out),
    ];
    args.extend_from_slice(extra);
    ok(&args);
}

#[test]
fn validate_lists_every_model() {
    let (_dir, manifest) = pool(5);
    let stdout = ok(&["pool", "validate", s(&manifest)]);
    assert_eq!(stdout.lines().count(), 5);
    assert!(stdout.lines().all(|l| l.contains("params=")));
}

#[test]
fn corrupted_predictions_are_reported_by_name() {
    let (_dir, manifest) = pool(3);
    let file = manifest.parent().unwrap().join("m001_test.eprd");
    let mut bytes = std::fs::read(&file).unwrap();
    bytes[0] ^= 0xff;
    std::fs::write(&file, bytes).unwrap();
    let out = earn(&["pool", "validate", s(&manifest)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("m001_test.eprd"));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(earn(&["search"]).status.code(), Some(1));
    assert_eq!(earn(&["frobnicate"]).status.code(), Some(1));
    let (_dir, manifest) = pool(3);
    assert_eq!(earn(&["--jobs", "0", "pool", "validate", s(&manifest)]).status.code(), Some(1));
    assert_eq!(earn(&["--help"]).status.code(), Some(0));
}

#[test]
fn search_writes_all_outputs_and_repeats() {
    let (dir, manifest) = pool(5);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    small_search(&manifest, &a, &["--seed", "9"]);
    small_search(&manifest, &b, &["--seed", "9"]);
    for f in ["archive.json", "archive.csv", "history.csv", "population.json", "run_manifest.json"] {
        assert!(a.join(f).is_file(), "missing {f}");
    }
    let history = std::fs::read_to_string(a.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 1 + 7);
    for f in ["archive.csv", "history.csv", "population.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }

    let run: Value = serde_json::from_str(&std::fs::read_to_string(a.join("run_manifest.json")).unwrap()).unwrap();
    assert_eq!(run["config"]["seed"], 9);
    assert_eq!(run["config"]["iterations"], 6);
    assert!(run["elapsed_s"].is_number());

    let c = dir.path().join("c");
    ok(&["search", "--from-manifest", s(&a.join("run_manifest.json")), "-o", s(&c)]);
    assert_eq!(
        std::fs::read(a.join("archive.csv")).unwrap(),
        std::fs::read(c.join("archive.csv")).unwrap()
    );
}

#[test]
fn objective_subset_sets_arity() {
    let (dir, manifest) = pool(4);
    let out = dir.path().join("run");
    small_search(&manifest, &out, &["--objectives", "error,size"]);
    let archive: Value = serde_json::from_str(&std::fs::read_to_string(out.join("archive.json")).unwrap()).unwrap();
    for e in archive.as_array().unwrap() {
        assert_eq!(e["objectives"].as_object().unwrap().len(), 2);
    }
}

#[test]
fn eval_of_a_single_matches_validate() {
    let (dir, manifest) = pool(3);
    let graph = dir.path().join("g.json");
    std::fs::write(&graph, r#"{"kind":"classifier","model":"m01"}"#).unwrap();
    let v: Value = serde_json::from_str(&ok(&["eval", s(&graph), "--pool", s(&manifest)])).unwrap();
    let listing = ok(&["pool", "validate", s(&manifest)]);
    let line = listing.lines().find(|l| l.starts_with("m01\t")).unwrap();
    let acc = format!("test_acc={:.4}", v["accuracy"].as_f64().unwrap());
    assert!(line.contains(&acc), "{line} vs {acc}");
    assert!(line.contains(&format!("params={}", v["size"])));

    std::fs::write(&graph, r#"{"kind":"classifier","model":"nope"}"#).unwrap();
    let out = earn(&["eval", s(&graph), "--pool", s(&manifest)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope"));
}

#[test]
fn archive_entries_reevaluate_exactly() {
    let (dir, manifest) = pool(5);
    let out = dir.path().join("run");
    small_search(&manifest, &out, &[]);
    let archive: Value = serde_json::from_str(&std::fs::read_to_string(out.join("archive.json")).unwrap()).unwrap();
    for (i, e) in archive.as_array().unwrap().iter().enumerate() {
        let path = dir.path().join(format!("e{i}.json"));
        std::fs::write(&path, serde_json::to_string(e).unwrap()).unwrap();
        let v: Value = serde_json::from_str(&ok(&[
            "eval", s(&path), "--pool", s(&manifest), "--split", "validation",
        ]))
        .unwrap();
        assert_eq!(v["hash"], e["hash"]);
        for k in ["error", "latency", "size"] {
            assert_eq!(v[k].as_f64(), e["objectives"][k].as_f64(), "{k} of entry {i}");
        }
    }
}

#[test]
fn chain_enumeration_counts_pairs_times_grid() {
    let (dir, manifest) = pool(4);
    let out = dir.path().join("chains.csv");
    ok(&["enumerate", "--pool", s(&manifest), "--strategy", "chain2", "-o", s(&out)]);
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 1 + 6 * 100);

    let front = dir.path().join("front.csv");
    ok(&[
        "enumerate", "--pool", s(&manifest), "--strategy", "bagging", "--k", "2", "--protocols",
        "average,voting", "--pareto", "-o", s(&front),
    ]);
    let rows = std::fs::read_to_string(&front).unwrap().lines().count() - 1;
    assert!(rows >= 1 && rows <= 12);
}

#[test]
fn report_on_a_single_model_pool() {
    let (dir, manifest) = pool(1);
    let run = dir.path().join("run");
    small_search(&manifest, &run, &[]);
    let out = dir.path().join("report");
    ok(&["report", "--pool", s(&manifest), "--archive", s(&run.join("archive.csv")), "-o", s(&out)]);
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let fastest = &summary["fastest"];
    assert_eq!(fastest["accuracy_gain"].as_f64(), Some(0.0));
    assert_eq!(fastest["speedup"].as_f64(), Some(1.0));
    assert_eq!(summary["smallest"]["size_reduction"].as_f64(), Some(1.0));
    for f in ["summary.txt", "points.csv", "front_latency_error.csv"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
}

#[test]
fn import_and_split_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let probs = dir.path().join("p.csv");
    let labels = dir.path().join("l.csv");
    let mut p = String::new();
    let mut l = String::new();
    for i in 0..40 {
        let c = i % 2;
        p.push_str(if c == 0 { "0.75,0.25\n" } else { "0.25,0.75\n" });
        l.push_str(&format!("{c}\n"));
    }
    std::fs::write(&probs, p).unwrap();
    std::fs::write(&labels, l).unwrap();
    let prefix = dir.path().join("m");
    let written = ok(&["pool", "import-csv", "--probs", s(&probs), "--labels", s(&labels), "-o", s(&prefix)]);
    assert_eq!(written.lines().count(), 2);
    let parts = dir.path().join("parts");
    ok(&[
        "pool", "split", "--labels", s(&prefix.with_extension("elbl")), "--probs",
        s(&prefix.with_extension("eprd")), "-o", s(&parts),
    ]);
    let v = std::fs::metadata(parts.join("m.validation.eprd")).unwrap().len();
    let t = std::fs::metadata(parts.join("m.test.eprd")).unwrap().len();
    assert_eq!(v, t);
}
