use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shuttlenet"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &[&str] = &[
    "--d",
    "8",
    "--heads",
    "2",
    "--ff-dim",
    "16",
    "--epochs",
    "2",
    "--batch-size",
    "8",
];

#[test]
fn synth_train_evaluate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("rallies.csv");
    ok(&["synth", "--seed", "4", "--out", path(&data)]);

    let mut metrics = Vec::new();
    for name in ["a.json", "b.json"] {
        let model = dir.path().join(name);
        let mut args = vec![
            "train",
            "--data",
            path(&data),
            "--split",
            "0.8",
            "--out",
            path(&model),
        ];
        args.extend_from_slice(SMALL);
        ok(&args);
        let out = ok(&[
            "evaluate",
            "--data",
            path(&data),
            "--split",
            "0.8",
            "--model",
            path(&model),
            "--k",
            "3",
        ]);
        let lines: Vec<String> = out
            .lines()
            .filter(|l| l.contains('=') && !l.contains(' '))
            .map(String::from)
            .collect();
        assert_eq!(lines.len(), 5, "{out}");
        metrics.push(lines);
    }
    assert_eq!(metrics[0], metrics[1]);
    assert_eq!(
        std::fs::read(dir.path().join("a.json")).unwrap(),
        std::fs::read(dir.path().join("b.json")).unwrap()
    );

    let observed = dir.path().join("observed.csv");
    let csv = std::fs::read_to_string(&data).unwrap();
    let rally: Vec<&str> = csv.lines().take(4).collect();
    std::fs::write(&observed, rally.join("\n")).unwrap();
    let fc = dir.path().join("forecast.json");
    ok(&[
        "forecast",
        "--model",
        path(&dir.path().join("a.json")),
        "--observed",
        path(&observed),
        "--horizon",
        "3",
        "--rollouts",
        "2",
        "--out",
        path(&fc),
    ]);
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&fc).unwrap()).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 2);
    assert_eq!(v[0]["steps"].as_array().unwrap().len(), 3);
}

#[test]
fn invalid_config_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("rallies.csv");
    ok(&["synth", "--out", path(&data)]);
    let model = dir.path().join("m.json");
    let out = run(&[
        "train",
        "--data",
        path(&data),
        "--tau",
        "0",
        "--out",
        path(&model),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    assert!(!model.exists());
}

#[test]
fn wrong_model_version_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("rallies.csv");
    ok(&["synth", "--out", path(&data)]);
    let model = dir.path().join("m.json");
    let mut args = vec!["train", "--data", path(&data), "--out", path(&model)];
    args.extend_from_slice(SMALL);
    ok(&args);
    let text =
        std::fs::read_to_string(&model)
            .unwrap()
            .replacen("\"version\":1", "\"version\":9", 1);
    std::fs::write(&model, text).unwrap();
    let out = run(&["evaluate", "--data", path(&data), "--model", path(&model)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("version"));
}

#[test]
fn missing_data_file_exits_nonzero() {
    let out = run(&[
        "evaluate",
        "--data",
        "/nonexistent/rallies.csv",
        "--model",
        "/nonexistent/m.json",
    ]);
    assert!(!out.status.success());
}
