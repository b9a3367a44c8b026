use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn spdgnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spdgnn")).args(args).output().expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn synth(dir: &Path) {
    ok(&spdgnn(&["synth", "--depth", "2", "--width", "2", "--height", "2", "--out", dir.to_str().unwrap()]));
}

#[test]
fn synth_train_evaluate_export() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    let out = tmp.path().join("out");
    synth(&data);
    assert!(data.join("graph.edges").exists() && data.join("split.json").exists());
    let common = [
        "--dataset-dir",
        data.to_str().unwrap(),
        "--geometry",
        "spd",
        "--dim",
        "6",
        "--max-epochs",
        "8",
        "--patience",
        "8",
        "--out",
        out.to_str().unwrap(),
    ];
    let mut train = vec!["train", "--seeds", "2"];
    train.extend(common);
    let stdout = ok(&spdgnn(&train));
    assert_eq!(stdout.lines().count(), 2);
    assert!(out.join("runs").read_dir().unwrap().count() == 1);

    let mut eval = vec!["evaluate", "--seeds", "2"];
    eval.extend(common);
    let stdout = ok(&spdgnn(&eval));
    assert!(stdout.contains("mean_test_accuracy"));
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 2);

    let mut export = vec!["export-embeddings", "--seed", "1"];
    export.extend(common);
    ok(&spdgnn(&export));
    let csv = std::fs::read_to_string(out.join("embeddings.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "node,label,e0,e1,e2,e3,e4,e5");

    let hash_dir = out.join("runs").read_dir().unwrap().next().unwrap().unwrap().path();
    let ckpt = hash_dir.join("seed-0.json");
    let mut eval_ckpt = vec!["evaluate", "--checkpoint", ckpt.to_str().unwrap()];
    eval_ckpt.extend(common);
    assert!(ok(&spdgnn(&eval_ckpt)).contains("test_accuracy"));
}

#[test]
fn config_file_with_flag_overrides() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    synth(&data);
    let cfg = tmp.path().join("c.json");
    let out = tmp.path().join("out");
    std::fs::write(
        &cfg,
        format!(
            r#"{{"dataset": "{}", "geometry": "euclidean", "dim": 4, "max_epochs": 3, "patience": 3, "out": "{}"}}"#,
            data.display(),
            out.display()
        ),
    )
    .unwrap();
    let stdout = ok(&spdgnn(&["train", "--config", cfg.to_str().unwrap(), "--arch", "gat", "--seed", "5"]));
    assert!(stdout.contains("\"seed\":5"));
    let run = out.join("runs").read_dir().unwrap().next().unwrap().unwrap().path();
    let stored = std::fs::read_to_string(run.join("config.json")).unwrap();
    assert!(stored.contains("\"arch\": \"gat\"") && stored.contains("\"geometry\": \"euclidean\""));
}

#[test]
fn hyperbolicity_of_a_tree_is_zero() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("tree");
    ok(&spdgnn(&["synth", "--kind", "tree", "--depth", "3", "--out", data.to_str().unwrap()]));
    let stdout = ok(&spdgnn(&["hyperbolicity", "--dataset-dir", data.to_str().unwrap()]));
    assert!(stdout.contains("\"delta\":0.0"), "{stdout}");
    let stdout = ok(&spdgnn(&["hyperbolicity", "--dataset-dir", data.to_str().unwrap(), "--samples", "1000"]));
    assert!(stdout.contains("\"exact\":false"));
}

#[test]
fn exit_codes() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    synth(&data);
    let d = data.to_str().unwrap();
    let out = tmp.path().join("out");
    let o = out.to_str().unwrap();

    let code = |args: &[&str]| spdgnn(args).status.code().unwrap();
    assert_eq!(code(&["train", "--dataset-dir", d, "--geometry", "spd", "--dim", "7", "--out", o]), 2);
    assert_eq!(code(&["train", "--dataset-dir", d, "--arch", "mlp", "--out", o]), 2);
    assert_eq!(code(&["train", "--dataset-dir", d, "--lr", "-1", "--out", o]), 2);
    assert_eq!(code(&["train", "--config", "/nonexistent/config.json"]), 2);
    assert_eq!(code(&["train", "--dataset-dir", "/nonexistent/data", "--out", o]), 3);
    std::fs::write(data.join("labels.csv"), "0\n").unwrap();
    assert_eq!(code(&["train", "--dataset-dir", d, "--out", o]), 3);
    assert_eq!(code(&["hyperbolicity", "--dataset-dir", d]), 3);
}

#[test]
fn divergence_exits_with_four() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    synth(&data);
    let out = tmp.path().join("out");
    let status = spdgnn(&[
        "train",
        "--dataset-dir",
        data.to_str().unwrap(),
        "--geometry",
        "spd",
        "--dim",
        "6",
        "--lr",
        "1e6",
        "--max-epochs",
        "20",
        "--patience",
        "20",
        "--out",
        out.to_str().unwrap(),
    ])
    .status;
    assert_eq!(status.code(), Some(4));
}
