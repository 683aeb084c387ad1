use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn thpn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_thpn"))
        .args(args)
        .output()
        .unwrap()
}

fn small(out: &Path) -> Vec<String> {
    [
        "--n-dialogues",
        "20",
        "--n-restaurants",
        "6",
        "--dim",
        "8",
        "--epochs",
        "1",
        "--max-len",
        "12",
        "--seed",
        "3",
        "--out",
    ]
    .iter()
    .map(|s| s.to_string())
    .chain([out.to_str().unwrap().to_string()])
    .collect()
}

fn run(cmd: &str, extra: &[String]) -> Output {
    let mut args = vec![cmd.to_string()];
    args.extend_from_slice(extra);
    Command::new(env!("CARGO_BIN_EXE_thpn"))
        .args(&args)
        .output()
        .unwrap()
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(thpn(&["--help"]).status.code(), Some(0));
    assert_eq!(thpn(&["--version"]).status.code(), Some(0));
    assert_eq!(thpn(&[]).status.code(), Some(1));
    assert_eq!(thpn(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(thpn(&["train", "--theta", "2.0"]).status.code(), Some(1));
    assert_eq!(thpn(&["train", "--dim", "zero"]).status.code(), Some(1));
}

#[test]
fn missing_data_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = thpn(&[
        "train",
        "--data",
        dir.path().join("nowhere").to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(!out.stderr.is_empty());
}

#[test]
fn gen_data_writes_splits() {
    let dir = tempfile::tempdir().unwrap();
    let out = run("gen-data", &small(dir.path()));
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for split in ["train", "valid", "test"] {
        assert!(dir.path().join(format!("{split}.jsonl")).is_file());
        assert!(dir.path().join(format!("{split}.babi.txt")).is_file());
    }
}

#[test]
fn train_eval_chat() {
    let dir = tempfile::tempdir().unwrap();
    let args = small(dir.path());
    let out = run("train", &args);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(dir.path().join("model.thpn").is_file());
    assert!(dir.path().join("train_log.jsonl").is_file());

    let out = run("eval", &args);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    let acc = report["per_response_accuracy"]
        .as_f64()
        .or_else(|| report["metrics"]["per_response_accuracy"].as_f64());
    assert!(acc.is_some_and(|a| (0.0..=1.0).contains(&a)), "{report}");

    // architecture flags that disagree with the checkpoint
    let mut bad = args.clone();
    let i = bad.iter().position(|a| a == "--dim").unwrap();
    bad[i + 1] = "16".into();
    assert_eq!(run("eval", &bad).status.code(), Some(3));

    let not_a_checkpoint = dir.path().join("report.json");
    let mut wrong = args.clone();
    wrong.extend([
        "--checkpoint".into(),
        not_a_checkpoint.to_str().unwrap().into(),
    ]);
    assert_eq!(run("eval", &wrong).status.code(), Some(3));

    let mut child = Command::new(env!("CARGO_BIN_EXE_thpn"))
        .arg("chat")
        .args(&args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"hello\n/reset\n/quit\n")
        .unwrap();
    let out = child.wait_with_output().unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("system:"));
}
