use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn dspr(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dspr"))
        .args(args)
        .current_dir(dir)
        .env_remove("DSPR_CONFIG")
        .output()
        .expect("run dspr")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = dspr(dir, args);
    assert!(
        out.status.success(),
        "dspr {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn json(path: PathBuf) -> Value {
    serde_json::from_slice(&fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))).unwrap()
}

fn no_partials(dir: &Path) {
    let leftovers: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().contains(".partial-"))
        .collect();
    assert!(leftovers.is_empty(), "staging directories left behind: {leftovers:?}");
}

/// Six short mixed clips with their panel, small enough for quick training.
fn small_suite(dir: &Path) {
    ok(dir, &["gen", "--kind", "mixed", "--count", "6", "--duration", "6", "--seed", "3", "-o", "g"]);
}

#[test]
fn gen_default_suite_writes_forty_scenarios_and_one_panel_file() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["gen", "--suite", "default", "--seed", "7", "-o", "g"]);
    let scenarios: Vec<_> = fs::read_dir(tmp.path().join("g/scenarios")).unwrap().collect();
    assert_eq!(scenarios.len(), 40);
    let files: Vec<String> = fs::read_dir(tmp.path().join("g"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".csv"))
        .collect();
    assert_eq!(files, ["panels.csv"]);

    let manifest = json(tmp.path().join("g/manifest.json"));
    assert_eq!(manifest["tool"], "dspr");
    assert_eq!(manifest["seeds"]["suite"], 7);
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 41);
}

#[test]
fn free_flow_risk_equals_background_values() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["gen", "--kind", "free_flow", "--duration", "5", "-o", "g"]);
    ok(tmp.path(), &["risk", "--model", "dspr", "--scenarios", "g/scenarios", "-o", "r"]);
    let mut reader = csv::Reader::from_path(tmp.path().join("r/free_flow_00.csv")).unwrap();
    let headers = reader.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let (trig, s_theta, energy, risk, object) = (col("triggered"), col("s_theta"), col("energy"), col("risk"), col("object"));
    let mut occupied = 0;
    for row in reader.records() {
        let row = row.unwrap();
        assert_eq!(&row[trig], "false");
        if row[object].is_empty() {
            assert_eq!(row[risk].parse::<f64>().unwrap(), 0.0);
            continue;
        }
        occupied += 1;
        let background = row[s_theta].parse::<f64>().unwrap() * row[energy].parse::<f64>().unwrap();
        let r = row[risk].parse::<f64>().unwrap();
        assert!((r - background).abs() <= 1e-12 * background.abs().max(1.0), "{r} vs {background}");
    }
    assert!(occupied > 0);
}

#[test]
fn pipeline_commands_chain_through_their_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_suite(d);
    ok(d, &["labels", "--panels", "g/panels.csv", "--scenarios", "g/scenarios", "-o", "lab"]);
    let summary = json(d.join("lab/summary.json"));
    assert_eq!(summary["frames"], 6 * 60);
    assert_eq!(
        summary["labeled"].as_u64().unwrap() + summary["unlabeled"].as_u64().unwrap(),
        360
    );

    ok(d, &["features", "--scenarios", "g/scenarios", "-o", "feat"]);
    let index = fs::read_to_string(d.join("feat/index.csv")).unwrap();
    assert_eq!(index.lines().count() - 1, 6 * (60 - 9));

    ok(d, &["features", "--scenarios", "g/scenarios", "--panels", "g/panels.csv", "-o", "ds"]);
    ok(d, &["train", "--dataset", "ds", "--max-epochs", "40", "-o", "tr"]);
    ok(d, &["eval", "--model", "tr/model.bin", "--dataset", "ds", "--max-epochs", "40", "-o", "ev"]);
    let trained = json(d.join("tr/metrics.json"));
    let evaluated = json(d.join("ev/metrics.json"));
    assert_eq!(trained["accuracy"], evaluated["accuracy"]);
    assert_eq!(trained["confusion"], evaluated["confusion"]);
    let probs = fs::read_to_string(d.join("ev/probabilities.csv")).unwrap();
    assert!(probs.starts_with("index,p1,p2,p3,p4"));
    assert_eq!(probs.lines().count() - 1, evaluated["samples"].as_u64().unwrap() as usize);

    ok(d, &["selftrain", "--dataset", "ds", "--max-epochs", "40", "-o", "st"]);
    for f in ["metrics.json", "audit.json", "adoption.csv", "pseudo_labels.csv", "model.bin", "manifest.json"] {
        assert!(d.join("st").join(f).exists(), "missing {f}");
    }
    let audit = json(d.join("st/audit.json"));
    assert_eq!(audit["iterations"].as_array().unwrap().len(), 5);

    ok(d, &["compare", "--scenarios", "g/scenarios", "--panels", "g/panels.csv", "--max-epochs", "40", "-o", "cmp"]);
    let cmp = fs::read_to_string(d.join("cmp/comparison.csv")).unwrap();
    let models: Vec<&str> = cmp.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(models, ["dspr", "ttc"]);
    no_partials(d);
}

#[test]
fn selftrain_on_default_suite_reports_table_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["gen", "--suite", "default", "-o", "g"]);
    ok(d, &["selftrain", "--scenarios", "g/scenarios", "--panels", "g/panels.csv", "--max-epochs", "20", "-o", "st"]);
    let m = json(d.join("st/metrics.json"));
    for key in ["accuracy", "macro_precision", "macro_recall", "macro_f1", "macro_auc", "samples"] {
        assert!(m[key].is_number(), "{key} missing or not a number");
    }
    for key in ["precision", "recall", "f1", "auc", "support"] {
        assert_eq!(m[key].as_array().map(Vec::len), Some(4), "{key}");
    }
    assert_eq!(m["confusion"].as_array().unwrap().len(), 4);
}

#[test]
fn report_writes_metrics_and_plot_ready_csvs() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_suite(d);
    ok(d, &["report", "--scenarios", "g/scenarios", "--panels", "g/panels.csv", "--max-epochs", "30", "-o", "rep"]);
    let report = json(d.join("rep/report.json"));
    assert!(report["ttc"]["metrics"]["accuracy"].is_number());
    let metrics = json(d.join("rep/metrics.json"));
    assert!(metrics["gain_points"].is_number());

    let series = fs::read_to_string(d.join("rep/risk_series.csv")).unwrap();
    let header: Vec<&str> = series.lines().next().unwrap().split(',').collect();
    assert_eq!(header.len(), 4 + 40);
    assert_eq!(series.lines().count() - 1, 6 * 60);

    let confusion = fs::read_to_string(d.join("rep/confusion.csv")).unwrap();
    assert_eq!(confusion.lines().count() - 1, 3 * 16);
    let adoption = fs::read_to_string(d.join("rep/adoption.csv")).unwrap();
    assert_eq!(adoption.lines().count() - 1, 2 * 5);
}

#[test]
fn artifacts_do_not_depend_on_thread_count() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_suite(d);
    for (threads, out) in [("1", "a"), ("3", "b")] {
        ok(d, &["--threads", threads, "selftrain", "--scenarios", "g/scenarios", "--panels", "g/panels.csv", "--max-epochs", "25", "-o", out]);
    }
    for f in ["model.bin", "metrics.json", "audit.json", "pseudo_labels.csv"] {
        assert_eq!(fs::read(d.join("a").join(f)).unwrap(), fs::read(d.join("b").join(f)).unwrap(), "{f}");
    }
    let (a, b) = (json(d.join("a/manifest.json")), json(d.join("b/manifest.json")));
    assert_eq!(a["config_sha256"], b["config_sha256"]);
    assert_eq!(a["outputs"], b["outputs"]);
}

#[test]
fn config_file_and_flags_resolve_in_order() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("run.toml"), "suite_seed = 21\n[pipeline.self_train]\nepsilon = 0.8\n").unwrap();
    ok(d, &["--config", "run.toml", "gen", "--kind", "cut_in", "--duration", "3", "-o", "a"]);
    let a = json(d.join("a/manifest.json"));
    assert_eq!(a["seeds"]["suite"], 21);
    assert_eq!(a["config"]["pipeline"]["self_train"]["epsilon"], 0.8);

    let out = Command::new(env!("CARGO_BIN_EXE_dspr"))
        .args(["gen", "--kind", "cut_in", "--duration", "3", "--seed", "4", "-o", "b"])
        .current_dir(d)
        .env("DSPR_CONFIG", "run.toml")
        .output()
        .unwrap();
    assert!(out.status.success());
    let b = json(d.join("b/manifest.json"));
    assert_eq!(b["seeds"]["suite"], 4);
    assert_eq!(b["config"]["pipeline"]["self_train"]["epsilon"], 0.8);
}

#[test]
fn errors_map_to_exit_codes_and_leave_no_partial_output() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_suite(d);

    fs::write(d.join("bad.toml"), "epsilom = 0.5\n").unwrap();
    assert_eq!(dspr(d, &["--config", "bad.toml", "gen", "--suite", "default", "-o", "x"]).status.code(), Some(2));
    assert_eq!(dspr(d, &["gen", "--suite", "default", "--split", "1.5", "-o", "x"]).status.code(), Some(2));
    assert_eq!(dspr(d, &["gen", "--kind", "mixed", "-o", "g"]).status.code(), Some(2), "existing output");

    fs::write(d.join("broken.jsonl"), "{not json}\n").unwrap();
    assert_eq!(dspr(d, &["risk", "--scenarios", "broken.jsonl", "-o", "x"]).status.code(), Some(3));
    assert_eq!(dspr(d, &["features", "--scenarios", "g/scenarios", "--panels", "missing.csv", "-o", "x"]).status.code(), Some(3));

    // An external classifier that answers with no probability rows.
    let script = d.join("empty.sh");
    fs::write(&script, "#!/bin/sh\necho index,p1,p2,p3,p4 > probabilities.csv\n").unwrap();
    let out = dspr(
        d,
        &["selftrain", "--scenarios", "g/scenarios", "--panels", "g/panels.csv", "--external", "sh", "--external-arg", script.to_str().unwrap(), "-o", "x"],
    );
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!d.join("x").exists());
    no_partials(d);
}

const UNIFORM_RUNNER: &str = r#"
import csv, json, sys
manifest = json.load(open(sys.argv[1]))
with open(manifest["predict"]["output"], "w", newline="") as f:
    w = csv.writer(f)
    w.writerow(["index", "p1", "p2", "p3", "p4"])
    for i in manifest["predict"]["indices"]:
        w.writerow([i, 0.25, 0.25, 0.25, 0.25])
"#;

#[test]
fn external_classifier_follows_the_file_contract() {
    if Command::new("python3").arg("--version").output().is_err() {
        eprintln!("python3 not available; skipping");
        return;
    }
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_suite(d);
    fs::write(d.join("runner.py"), UNIFORM_RUNNER).unwrap();
    let runner = d.join("runner.py");
    ok(
        d,
        &["selftrain", "--scenarios", "g/scenarios", "--panels", "g/panels.csv", "--external", "python3", "--external-arg", runner.to_str().unwrap(), "-o", "st"],
    );
    let audit = json(d.join("st/audit.json"));
    // Uniform answers are never confident, so nothing is adopted.
    assert!(audit["iterations"].as_array().unwrap().iter().all(|r| r["adopted"] == 0));
    let round = d.join("st/external/round_001");
    let manifest = json(round.join("manifest.json"));
    assert_eq!(manifest["contract_version"], 1);
    assert_eq!(manifest["classes"], 4);
    assert_eq!(manifest["window"], 10);
    assert!(round.join("dataset/windows.bin").exists());
    assert!(round.join("dataset/index.csv").exists());
    assert!(round.join("probabilities.csv").exists());
    let m = json(d.join("st/metrics.json"));
    // Ties go to class 1, so accuracy equals the class-1 share of the test set.
    let support: Vec<u64> = m["support"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
    let expected = support[0] as f64 / support.iter().sum::<u64>() as f64;
    assert!((m["accuracy"].as_f64().unwrap() - expected).abs() < 1e-12);
}
