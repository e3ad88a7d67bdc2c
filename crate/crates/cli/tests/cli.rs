use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ldp-poison"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok_json(args: &[&str]) -> Value {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn gen_perturb_attack_train_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let stats = ok_json(&[
        "gen", "--out", p(&data), "--nodes", "240", "--classes", "3", "--dims", "8", "--p-in",
        "0.08", "--p-out", "0.01", "--seed", "4",
    ]);
    assert_eq!(stats["nodes"], 240);
    for f in ["edges.txt", "features.csv", "labels.csv"] {
        assert!(data.join(f).exists(), "{f}");
    }

    let reports = tmp.path().join("reports.csv");
    let meta = ok_json(&[
        "perturb", "--data", p(&data), "--mechanism", "PM", "--epsilon", "1.0", "--seed", "2",
        "--out", p(&reports),
    ]);
    assert_eq!(meta["epsilon"], 1.0);
    assert!(reports.exists());

    let poisoned = tmp.path().join("poisoned");
    let summary = ok_json(&[
        "attack", "--data", p(&data), "--reports", p(&reports), "--epsilon", "1.0", "--seed", "3",
        "--out", p(&poisoned),
    ]);
    let fakes = summary["fakes"].as_u64().unwrap();
    assert!(fakes > 0);
    assert_eq!(summary["stats"]["nodes"].as_u64().unwrap(), 240 + fakes);
    let plan = poisoned.join("attack_plan.json");
    assert!(plan.exists());

    let model = tmp.path().join("model.json");
    let record = ok_json(&[
        "train", "--data", p(&poisoned), "--no-normalize", "--plan", p(&plan), "-K", "2",
        "--epochs", "60", "--out", p(&model),
    ]);
    let acc = record["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));

    let records = ok_json(&[
        "eval", "--data", p(&poisoned), "--no-normalize", "--model-file", p(&model), "--plan",
        p(&plan),
    ]);
    let records = records.as_array().unwrap();
    assert_eq!(records.len(), 2);
    assert_eq!(records[0]["accuracy"].as_f64().unwrap(), acc);
    assert_eq!(records[1]["scope"], "targeted");
}

#[test]
fn experiment_defend_and_export() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.cfg");
    fs::write(
        &cfg,
        "nodes = 200\nclasses = 2\ndims = 6\np_in = 0.08\np_out = 0.01\nK = 0,2\nseeds = 0..2\nepochs = 40\nbootstrap_resamples = 100\ngn_max_communities = 6\n",
    )
    .unwrap();
    let out = tmp.path().join("results");
    let status = run(&["experiment", "--config", p(&cfg), "--out", p(&out)]);
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    for f in ["results.csv", "summary.json", "attack_plan.json", "config.resolved"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let rows = fs::read_to_string(out.join("results.csv")).unwrap();
    // 2 K × 2 seeds × 2 scopes × 2 phases plus the header.
    assert_eq!(rows.lines().count(), 17);

    let summary = ok_json(&["defend", "--config", p(&cfg), "--out", p(&out)]);
    assert!(summary["ks_node"].as_f64().unwrap() >= 0.0);

    let listed = run(&["export-figures-data", "--results", p(&out)]);
    assert!(listed.status.success());
    assert!(out.join("figures").join("summary.csv").exists());

    let curve = run(&["theory", "curve", "--epsilons", "0.1,1.0", "--trials", "3"]);
    assert!(curve.status.success(), "{}", String::from_utf8_lossy(&curve.stderr));
    let text = String::from_utf8(curve.stdout).unwrap();
    assert!(text.starts_with("epsilon,mean_delta_psi,stderr,trials,seed"));
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn theory_formula_prints_both_terms() {
    let v = ok_json(&[
        "theory", "formula", "--sigma2", "1", "--sigma2-atk", "4", "--deg-target", "4",
        "--n-atk-neighbors", "2", "--q", "0.2", "--bound", "2", "-K", "2", "--n-fake", "10",
    ]);
    assert!((v["expected_delta_psi"].as_f64().unwrap() - 800.0 / 9.0).abs() < 1e-12);
    assert!(v["variance_bias"].as_f64().unwrap() > 0.0);
}

#[test]
fn exit_codes_follow_the_error_kind() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.cfg");
    fs::write(&bad, "epsilon = -1\n").unwrap();
    assert_eq!(run(&["experiment", "--config", p(&bad)]).status.code(), Some(2));
    assert_eq!(
        run(&["experiment", "--set", "no_such_key=1"]).status.code(),
        Some(2)
    );

    // Average degree below 2 violates the attack precondition.
    let sparse = tmp.path().join("sparse");
    ok_json(&[
        "gen", "--out", p(&sparse), "--nodes", "200", "--classes", "2", "--dims", "4", "--p-in",
        "0.005", "--p-out", "0.001",
    ]);
    let out = run(&["attack", "--data", p(&sparse), "--out", p(&tmp.path().join("x"))]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));

    let numeric = run(&[
        "theory", "formula", "--sigma2", "1", "--sigma2-atk", "4", "--deg-target", "4",
        "--n-atk-neighbors", "2", "--lambda", "5", "--q", "0.2", "--bound", "2", "-K", "2",
        "--n-fake", "10",
    ]);
    assert_eq!(numeric.status.code(), Some(4));

    let missing = run(&["defend", "--out", p(&tmp.path().join("nothing"))]);
    assert_eq!(missing.status.code(), Some(1));
}
