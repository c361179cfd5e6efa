//! End-to-end runs of the `ggc` binary.

use std::path::PathBuf;
use std::process::{Command, Output};

use ggc::dectree::DecisionTree;
use serde_json::{json, Value};

fn ggc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ggc")).args(args).output().expect("binary runs")
}

fn scratch(name: &str, contents: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("ggc-cli-tests-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let p = dir.join(name);
    std::fs::write(&p, contents).unwrap();
    p
}

fn json_out(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("bad json ({e}): {}", String::from_utf8_lossy(&o.stdout)))
}

fn number(v: &Value) -> f64 {
    v.as_f64().unwrap_or_else(|| panic!("not a number: {v}"))
}

/// First check in any section whose name contains `needle`.
fn check<'a>(report: &'a Value, needle: &str) -> &'a Value {
    report["sections"]
        .as_array()
        .unwrap()
        .iter()
        .flat_map(|s| s["checks"].as_array().unwrap())
        .find(|c| c["name"].as_str().unwrap().contains(needle))
        .unwrap_or_else(|| panic!("no check named like {needle:?} in {report}"))
}

/// First table whose title contains `needle`.
fn table<'a>(report: &'a Value, needle: &str) -> &'a Value {
    report["sections"]
        .as_array()
        .unwrap()
        .iter()
        .flat_map(|s| s["tables"].as_array().unwrap())
        .find(|t| t["title"].as_str().unwrap().contains(needle))
        .unwrap_or_else(|| panic!("no table titled like {needle:?} in {report}"))
}

#[test]
fn catalog_then_verify_recovers_the_sizes() {
    let out = ggc(&["catalog", "dense-learning", "--n", "3"]);
    assert_eq!(out.status.code(), Some(0));
    let path = scratch("dense3.json", &String::from_utf8(out.stdout).unwrap());
    let out = ggc(&["verify", path.to_str().unwrap(), "--format", "json"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let r = json_out(&out);
    assert_eq!(r["pass"], json!(true));
    let table = table(&r, "sizes");
    let cols: Vec<&str> = table["columns"].as_array().unwrap().iter().map(|c| c.as_str().unwrap()).collect();
    let plus = cols.iter().position(|c| *c == "R+").expect("R+ column");
    let minus = cols.iter().position(|c| *c == "R-").expect("R- column");
    let rows = table["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 8);
    for row in rows {
        assert!((number(&row[plus]) - 3.0).abs() < 1e-9);
        assert!((number(&row[minus]) - 3.0).abs() < 1e-9);
    }
}

#[test]
fn catalog_writes_to_a_file() {
    let dir = std::env::temp_dir().join(format!("ggc-cli-out-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let p = dir.join("min.json");
    let out = ggc(&["catalog", "minimum-finding", "--n", "3", "-o", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
    assert_eq!(doc["kind"], json!("hypergraph"));
}

#[test]
fn wdt_of_a_single_leaf_is_zero() {
    let doc = json!({ "kind": "tree", "tree": DecisionTree::leaf_only() });
    let path = scratch("leaf.json", &doc.to_string());
    let out = ggc(&["wdt", path.to_str().unwrap(), "--format", "json"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let r = json_out(&out);
    assert_eq!(number(&table(&r, "WDT")["rows"][0][0]), 0.0);
    assert_eq!(check(&r, "validates")["pass"], json!(true));
}

#[test]
fn parallel_unit_edges_have_resistance_one_half() {
    let doc = json!({
        "kind": "graph",
        "graph": {
            "vertices": ["s", "t"],
            "edges": [
                { "tail": "s", "head": "t", "resistance": 1.0 },
                { "tail": "s", "head": "t", "resistance": 1.0 }
            ]
        },
        "net_flow": { "s": 1.0, "t": -1.0 }
    });
    let path = scratch("parallel.json", &doc.to_string());
    let out = ggc(&["resistance", path.to_str().unwrap(), "--format", "json"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let r = json_out(&out);
    for row in table(&r, "resistance")["rows"].as_array().unwrap() {
        assert!((number(&row[1]) - 0.5).abs() < 1e-12, "{r}");
    }
    assert!(number(&check(&r, "Laplacian vs incidence")["value"]) <= 1e-8);
}

#[test]
fn empty_reflection_gives_an_empty_passing_report() {
    let doc = json!({ "kind": "reflection", "problem": { "inputs": [] }, "witnesses": { "plus": [], "minus": [] } });
    let path = scratch("empty.json", &doc.to_string());
    let out = ggc(&["verify", path.to_str().unwrap(), "--format", "json"]);
    assert_eq!(out.status.code(), Some(0));
    let r = json_out(&out);
    assert_eq!(r["pass"], json!(true));
    assert_eq!(r["sections"], json!([]));
    let text = ggc(&["verify", path.to_str().unwrap()]);
    assert!(String::from_utf8_lossy(&text.stdout).contains("(no results)"));
}

#[test]
fn seeded_qwalk_is_byte_identical() {
    let a = ggc(&["qwalk", "--seed", "7", "--format", "json"]);
    let b = ggc(&["qwalk", "--seed", "7", "--format", "json"]);
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stdout));
    assert_eq!(a.stdout, b.stdout);
    let c = ggc(&["qwalk", "--seed", "8", "--format", "json"]);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn perturbed_witness_fails_with_a_location() {
    let out = ggc(&["catalog", "dense-learning", "--n", "2"]);
    let mut doc: Value = serde_json::from_slice(&out.stdout).unwrap();
    let w = &mut doc["instance"]["edges"][0]["witnesses"]["plus"][0][0][0];
    *w = json!(number(w) + 0.5);
    let path = scratch("perturbed.json", &doc.to_string());
    let out = ggc(&["verify", path.to_str().unwrap(), "--format", "json"]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stdout));
    let r = json_out(&out);
    assert_eq!(r["pass"], json!(false));
    let failing: Vec<&Value> = r["sections"]
        .as_array()
        .unwrap()
        .iter()
        .flat_map(|s| s["checks"].as_array().unwrap())
        .filter(|c| c["pass"] == json!(false))
        .collect();
    assert!(!failing.is_empty());
    assert!(failing.iter().any(|c| c["location"].as_str().is_some_and(|l| l.contains('⟨'))), "{r}");
}

#[test]
fn malformed_input_exits_two_with_an_error_object() {
    let path = scratch("broken.json", "{ \"kind\": \"graph\", ");
    let out = ggc(&["resistance", path.to_str().unwrap(), "--format", "json"]);
    assert_eq!(out.status.code(), Some(2));
    let r = json_out(&out);
    assert_eq!(r["command"], json!("resistance"));
    assert_eq!(r["error"]["kind"], json!("parse"));
    assert!(r["error"]["message"].as_str().is_some());

    let out = ggc(&["verify", "/no/such/file.json", "--format", "json"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(json_out(&out)["error"]["kind"], json!("io"));

    let out = ggc(&["verify", "/no/such/file.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn unknown_fields_are_schema_errors() {
    let doc = json!({ "kind": "graph", "graph": { "vertices": ["a"], "edges": [] }, "extra": 1 });
    let path = scratch("extra.json", &doc.to_string());
    let out = ggc(&["resistance", path.to_str().unwrap(), "--format", "json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_flags_exit_two_and_help_exits_zero() {
    assert_eq!(ggc(&["verify"]).status.code(), Some(2));
    assert_eq!(ggc(&["--help"]).status.code(), Some(0));
}

#[test]
fn every_walk_mode_runs_on_a_drawn_instance() {
    for mode in ["detection", "finding-unique", "finding-fraction", "variable-one", "variable-two", "mnrs"] {
        let out = ggc(&["qwalk", "--seed", "1", "--mode", mode, "--format", "json"]);
        assert_eq!(out.status.code(), Some(0), "{mode}: {}", String::from_utf8_lossy(&out.stdout));
        assert_eq!(json_out(&out)["pass"], json!(true));
    }
}

#[test]
fn transduce_a_catalog_fixture() {
    let out = ggc(&["catalog", "minimum-finding", "--n", "3"]);
    let path = scratch("min3.json", &String::from_utf8(out.stdout).unwrap());
    let out = ggc(&["transduce", path.to_str().unwrap(), "-K", "1,4", "--format", "json"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    assert_eq!(json_out(&out)["pass"], json!(true));
}
