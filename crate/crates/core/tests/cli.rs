mod common;

use std::process::{Command, Output};

use common::fixture;

fn ergorank(args: &[&str]) -> Output {
    let cache = tempfile::tempdir().unwrap();
    Command::new(env!("CARGO_BIN_EXE_ergorank"))
        .args(args)
        .env("ERGORANK_CACHE_DIR", cache.path())
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn invalid_spec_exits_2() {
    let o = ergorank(&["analyze", fixture("invalid_spec.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = ergorank(&["tree", "no_such_operator(3)", "--epsilon", "0.5"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn check_exit_codes() {
    let o = ergorank(&["check", fixture("conforming_certificate.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).trim(), "accept");
    for bad in ["margin_not_above_epsilon.json", "witness_outside_ball.json", "j_not_increasing.json"] {
        let o = ergorank(&["check", fixture(bad).to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(1), "{bad}");
        assert!(String::from_utf8_lossy(&o.stderr).contains("reject:"));
    }
    assert_eq!(ergorank(&["check", "/nonexistent/cert.json"]).status.code(), Some(2));
}

#[test]
fn certify_none_found_exits_1() {
    let o = ergorank(&["certify", "scalar(0.5)", "--epsilon", "0.9", "--depth", "2"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("none found"));
}

#[test]
fn certify_then_check() {
    let dir = tempfile::tempdir().unwrap();
    let cert = dir.path().join("c.json");
    let spec = fixture("left_shift_4.json");
    let o = ergorank(&[
        "certify", spec.to_str().unwrap(), "--epsilon", "0.5", "--depth", "1", "--basis-only", "--out",
        cert.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(ergorank(&["check", cert.to_str().unwrap()]).status.code(), Some(0));
}

#[test]
fn identity_tree_has_five_nodes() {
    let o = ergorank(&["tree", "identity(4)", "--epsilon", "0.1", "--depth", "3", "--index-bound", "4"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["members"].as_array().unwrap().len(), 5);

    let o = ergorank(&[
        "tree", "identity(4)", "--epsilon", "0.1", "--depth", "3", "--index-bound", "4", "--format", "dot",
    ]);
    let dot = stdout(&o);
    assert!(dot.starts_with("digraph entropy_tree {"));
    assert_eq!(dot.lines().filter(|l| l.starts_with("  \"") && !l.contains("->")).count(), 5);
}

#[test]
fn shift_tree_contains_doubling_chain() {
    let o = ergorank(&["tree", "left_shift_l1(128)", "--epsilon", "0.5"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let members = v["members"].as_array().unwrap();
    assert!(members.iter().any(|m| m == &serde_json::json!([1, 2, 4])));
}

#[test]
fn gallery_list_and_emit() {
    let list = stdout(&ergorank(&["gallery"]));
    assert!(list.contains("templates:") && list.contains("jordan_1(2)"));
    let o = ergorank(&["gallery", "--emit", "left_shift_l1(4)"]);
    assert!(o.status.success());
    let spec: ergorank::OperatorSpec = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(spec.dim(), 4);
    assert_eq!(ergorank(&["gallery", "--emit", "bogus"]).status.code(), Some(2));
}

#[test]
fn analyze_is_deterministic() {
    let run = || {
        let o = ergorank(&["analyze", "scalar(0.5)", "--horizon", "500", "--no-cache"]);
        assert!(o.status.success());
        let text = stdout(&o);
        text[..text.rfind("\"timings_ms\"").unwrap()].to_string()
    };
    assert_eq!(run(), run());
}
