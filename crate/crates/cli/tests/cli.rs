use std::path::Path;
use std::process::{Command, Output};

fn pitune(registry: Option<&Path>, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_pitune"));
    cmd.env_remove("PI_REGISTRY");
    if let Some(r) = registry {
        cmd.arg("--registry").arg(r);
    }
    cmd.args(args).output().unwrap()
}

fn ok(registry: &Path, args: &[&str]) -> String {
    let out = pitune(Some(registry), args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn assert_fails(out: &Output, code: i32, kind: &str) {
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert_eq!(out.status.code(), Some(code), "{stderr}");
    let line = stderr.lines().find(|l| l.starts_with("pitune-error ")).expect("diagnostic line");
    assert!(line.starts_with(&format!("pitune-error code={code} kind={kind} reason=\"")), "{line}");
}

/// Small registry: three family tasks, one low-shot target, trained experts
/// and embeddings.
fn registry(root: &Path) {
    ok(
        root,
        &["gen-tasks", "--angles", "0,20,40", "--targets", "10", "--train", "150", "--val", "50", "--test", "100"],
    );
    ok(root, &["pretrain", "--steps", "30"]);
    ok(root, &["train-expert", "--all", "--steps", "30"]);
    ok(root, &["embed", "--all", "--samples", "64"]);
}

#[test]
fn pipeline_artifacts_and_error_classes() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("reg");
    registry(&root);

    let ranked = ok(&root, &["retrieve", "--task", "rot010", "-k", "2"]);
    assert_eq!(ranked.lines().count(), 2);
    assert_fails(&pitune(Some(&root), &["retrieve", "--task", "rot010", "-k", "9"]), 1, "retrieval");

    // frozen tuning runs zero steps, so its metrics equal a direct evaluation
    ok(&root, &["pi-tune", "--task", "rot010", "-k", "2", "--mode", "frozen"]);
    let stem = root.join("out/pi-tune/rot010-adapter-frozen-k2");
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(stem.with_extension("json")).unwrap()).unwrap();
    let eval = ok(&root, &["eval", "--task", "rot010", "--expert", stem.with_extension("pifx").to_str().unwrap()]);
    let eval: serde_json::Value = serde_json::from_str(eval.trim()).unwrap();
    assert_eq!(eval["accuracy"], metrics["test_accuracy"]);

    ok(&root, &["graph"]);
    let csv = std::fs::read_to_string(root.join("out/similarity-adapter.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    ok(&root, &["landscape", "--task", "rot020", "--experts", "rot000,rot020,rot040", "--grid", "3"]);
    assert!(root.join("out/landscape/rot020-adapter.svg").exists());

    let backbone = std::fs::read(root.join("backbone.pifb")).unwrap();
    ok(&root, &["pretrain", "--steps", "5"]);
    assert_eq!(std::fs::read(root.join("backbone.pifb")).unwrap(), backbone);

    assert_fails(&pitune(Some(&root), &["gen-tasks", "--angles", "0,30"]), 2, "data");
    assert_fails(&pitune(Some(&root), &["eval", "--task", "nope"]), 2, "data");
    ok(&root, &["fsck"]);
    std::fs::write(root.join("tasks/rot020/expert-adapter.pifx"), b"junk").unwrap();
    assert_fails(&pitune(Some(&root), &["fsck"]), 2, "data");
}

#[test]
fn usage_and_missing_registry() {
    let tmp = tempfile::tempdir().unwrap();
    assert_fails(&pitune(None, &["fsck"]), 1, "config");
    assert_fails(&pitune(Some(&tmp.path().join("absent")), &["fsck"]), 2, "data");
    assert_fails(&pitune(Some(tmp.path()), &["pi-tune", "--task", "x"]), 1, "usage");
    assert_fails(&pitune(Some(tmp.path()), &["gen-tasks", "--permutations", "5"]), 1, "config");
}

#[test]
fn check_bound_needs_no_registry() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_pitune"))
        .env_remove("PI_REGISTRY")
        .args(["--out", tmp.path().to_str().unwrap(), "check-bound", "--trials", "20", "--dim", "5"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("holds=20/20"));
    assert!(tmp.path().join("check-bound-d5.json").exists());
}
