//! End-to-end runs of the `cpegraph` binary against the committed fixtures.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(rel)
}

fn run(store: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cpegraph"))
        .arg("--store-dir")
        .arg(store)
        .args(args)
        .env_remove("CPEGRAPH_STORE_DIR")
        .output()
        .expect("spawn cpegraph")
}

fn json_ok(store: &Path, args: &[&str]) -> Value {
    let out = run(store, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn stats_match_frozen_corpus_values() {
    let dir = tempfile::tempdir().unwrap();
    let feed = fixture("corpus/feed.jsonl");
    let dict = fixture("corpus/cpe_dictionary.jsonl");
    let got = json_ok(dir.path(), &["stats", "--feed", path(&feed), "--cpe-dictionary", path(&dict)]);
    let want: Value =
        serde_json::from_str(&std::fs::read_to_string(fixture("corpus/expected_stats.json")).unwrap()).unwrap();
    assert_eq!(got, want);
}

#[test]
fn alias_queries_agree_through_the_store() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    let built = json_ok(
        &store,
        &[
            "build-db",
            "--feed",
            path(&fixture("alias/feed.jsonl")),
            "--dictionary",
            path(&fixture("alias/dictionary.json")),
        ],
    );
    assert_eq!(built["unresolved"], 0);
    assert_eq!(built["generation"], 1);

    let query = |vendor: &str, product: &str| {
        json_ok(&store, &["query", "product", "--vendor", vendor, "--product", product])
    };
    let canonical = query("microsoft", "internet explorer");
    assert!(canonical.as_array().is_some_and(|a| !a.is_empty()));
    for (vendor, product) in [("Microsoft Corp", "ie"), ("microsoft-corp", "msie"), ("microsoft corporation", "IE")] {
        assert_eq!(query(vendor, product), canonical, "{vendor}/{product}");
    }

    let hit = json_ok(&store, &["query", "cve", "CVE-2020-10001"]);
    assert_eq!(hit["status"], "found");
    let miss = json_ok(&store, &["query", "cve", "CVE-1999-0001"]);
    assert_eq!(miss["status"], "not_found");
}

#[test]
fn eval_and_incremental_filter_on_adversarial_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    let fx = fixture("adversarial");
    json_ok(
        &store,
        &[
            "build-db",
            "--feed",
            path(&fx.join("feed.json")),
            "--dictionary",
            path(&fx.join("dictionary.json")),
        ],
    );
    let inventory = fx.join("inventory.json");
    let csv = dir.path().join("table.csv");
    let table = json_ok(
        &store,
        &[
            "eval",
            "--inventory",
            path(&inventory),
            "--ground-truth",
            path(&fx.join("ground_truth.json")),
            "--csv",
            path(&csv),
        ],
    );
    let avg = |name: &str| {
        table["averages"]
            .as_array()
            .unwrap()
            .iter()
            .find(|r| r["strategy"] == name)
            .cloned()
            .unwrap()
    };
    assert_eq!(avg("ucpe-graph-filtered")["precision"], 1.0);
    assert_eq!(avg("ucpe-graph-filtered")["coverage"], 1.0);
    assert!(avg("keyword-match")["precision"].as_f64().unwrap() < 1.0);
    assert!(std::fs::read_to_string(&csv).unwrap().lines().count() > 3);

    let state = dir.path().join("state.json");
    let args = ["filter", "--inventory", path(&inventory), "--state", path(&state), "--no-traces"];
    let first = json_ok(&store, &args);
    assert_eq!(first["evaluated_pairs"], 207);
    let second = json_ok(&store, &args);
    assert_eq!(second["evaluated_pairs"], 0);
    assert_eq!(first["applicable"], second["applicable"]);
}

#[test]
fn errors_are_reported_as_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        &["eval", "--inventory", path(&fixture("adversarial/inventory.json"))],
    );
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).expect("stderr is JSON");
    assert_eq!(err["code"], "GroundTruthMissing");
    assert_eq!(err["module"], "eval_harness");

    let out = run(dir.path(), &["stats", "--feed", "/nonexistent/feed.json"]);
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).expect("stderr is JSON");
    assert_eq!(err["code"], "ConfigError");
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let catalog = fixture("heuristics/catalog.jsonl");
    let args = ["inconsistencies", "--catalog", path(&catalog)];
    let first = run(dir.path(), &args);
    let second = run(dir.path(), &args);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    assert!(!first.stdout.is_empty());
    assert_eq!(first.stdout, second.stdout);
}
