use std::process::{Command, Output};

fn swin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_swin"))
        .args(args)
        .output()
        .expect("spawn swin")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn describe_lists_four_stages() {
    let o = swin(&["describe", "--variant", "S"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    for tokens in ["3136", "784", "196", "49"] {
        assert!(text.contains(tokens), "{text}");
    }
    assert!(text.contains("depths=[2, 2, 18, 2]"));
    assert!(String::from_utf8_lossy(&o.stderr).contains("\"variant\":\"S\""));
}

#[test]
fn audits_pass_for_every_variant() {
    for v in ["T", "S", "B", "L"] {
        assert_eq!(swin(&["params", "--variant", v]).status.code(), Some(0), "params {v}");
        assert_eq!(swin(&["flops", "--variant", v]).status.code(), Some(0), "flops {v}");
    }
}

#[test]
fn audit_failure_exits_one_with_json() {
    let o = swin(&["params", "--variant", "T", "--tolerance", "0.00001"]);
    assert_eq!(o.status.code(), Some(1));
    let text = stdout(&o);
    let last = text.lines().last().unwrap();
    let v: serde_json::Value = serde_json::from_str(last).unwrap();
    assert_eq!(v["failures"][0]["check"], "params");
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(swin(&["bogus"]).status.code(), Some(2));
    assert_eq!(swin(&["params", "--variant", "Q"]).status.code(), Some(2));
    assert_eq!(swin(&["describe", "--dtype", "f16"]).status.code(), Some(2));
    assert_eq!(swin(&[]).status.code(), Some(2));
}

#[test]
fn export_masks_writes_json() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("masks.json");
    let o = swin(&[
        "export-masks",
        "--height",
        "6",
        "--width",
        "6",
        "--window",
        "3",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
    assert!(v.get("mask").is_some());
    assert!(v.get("relative_position_index").is_some());
}

#[test]
fn export_masks_rejects_bad_geometry() {
    let o = swin(&[
        "export-masks",
        "--height",
        "4",
        "--width",
        "4",
        "--window",
        "3",
        "--shift",
        "3",
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn short_training_run_writes_log_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run.json");
    let o = swin(&[
        "train-toy",
        "--steps",
        "3",
        "--samples",
        "16",
        "--batch",
        "8",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(v["log"]["steps"].as_array().unwrap().len(), 3);
    assert!(out.with_extension("ckpt").exists());
}
