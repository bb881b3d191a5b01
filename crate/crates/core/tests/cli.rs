use std::path::Path;
use std::process::{Command, Output};

fn ssdr(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ssdr")).args(args).current_dir(cwd).env("SSDR_THREADS", "1").output().unwrap()
}

#[test]
fn scene_partition_eval_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("scene.cfg"), "scene.points = 3000\nscene.seed = 5\n").unwrap();
    let out = ssdr(&["gen-scene", "scene.cfg", "--out", "scene.txt"], d);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out = ssdr(&["partition", "scene.txt", "--classes", "3", "--out", "parts.txt"], d);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(d.join("parts.txt")).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 3000);
    assert!(rows.iter().all(|r| r.split_whitespace().count() == 8));

    // Ground truth against itself scores perfectly.
    let out = ssdr(&["eval", "scene.txt", "parts.txt", "--classes", "3"], d);
    assert!(out.status.success());
    let metrics: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(metrics["accuracy"], 1.0);
    assert_eq!(metrics["miou"], 1.0);
}

#[test]
fn exit_codes_separate_config_and_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(ssdr(&["frobnicate"], d).status.code(), Some(1));
    std::fs::write(d.join("bad.cfg"), "run.strategy = psychic\n").unwrap();
    assert_eq!(ssdr(&["run", "bad.cfg"], d).status.code(), Some(1));
    std::fs::write(d.join("broken.txt"), "0 0 0 0.5 0.5\n").unwrap();
    assert_eq!(ssdr(&["partition", "broken.txt", "--classes", "2", "--out", "o.txt"], d).status.code(), Some(2));
    assert_eq!(ssdr(&["partition", "missing.txt", "--classes", "2", "--out", "o.txt"], d).status.code(), Some(2));
}

#[test]
fn run_writes_log_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("run.cfg"),
        "run.strategy = random\nrun.cycles = 2\nrun.output = log.jsonl\nscene.points = 4000\n",
    )
    .unwrap();
    let out = ssdr(&["run", "run.cfg"], d);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out.stdout.is_empty());
    let log = std::fs::read_to_string(d.join("log.jsonl")).unwrap();
    let kinds: Vec<String> = log
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["type"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(kinds.last().map(String::as_str), Some("summary"));
    assert!(kinds[..kinds.len() - 1].iter().all(|k| k == "cycle"));
}
