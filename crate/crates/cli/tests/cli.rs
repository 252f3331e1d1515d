use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lanedet::eval::EvalReport;
use lanedet::network::{load_weights, save_weights, LaneNet, ModelConfig};
use lanedet::train::read_checkpoint_meta;
use lanedet::params::ParamKind;

fn lanedet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lanedet"))
        .args(args)
        .env("LANEDET_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = lanedet(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, name: &str, count: usize, seed: u64) -> PathBuf {
    let out = dir.join(name);
    ok(&[
        "synth", "--out", s(&out), "--count", &count.to_string(), "--seed", &seed.to_string(),
        "--height", "32", "--width", "48",
    ]);
    out
}

fn train(data: &Path, out: &Path, extra: &[&str]) {
    let mut args = vec![
        "train", "--data", s(data), "--out", s(out), "--height", "32", "--width", "48",
        "--batch-size", "2", "--epochs", "1", "--print-every", "0",
    ];
    args.extend_from_slice(extra);
    ok(&args);
}

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth(dir.path(), "a", 4, 3);
    let b = synth(dir.path(), "b", 4, 3);
    let c = synth(dir.path(), "c", 4, 4);
    assert_eq!(tree(&a), tree(&b));
    assert_ne!(tree(&a), tree(&c));
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    assert_eq!(lanedet(&["synth", "--out", s(&out), "--count", "0"]).status.code(), Some(1));
    assert_eq!(lanedet(&["train", "--out", s(&out)]).status.code(), Some(1));
    assert_eq!(lanedet(&["gradcheck", "--scope", "no_such_scope"]).status.code(), Some(1));
    assert_eq!(lanedet(&["synth", "--out", s(&out), "--height", "30"]).status.code(), Some(1));
}

#[test]
fn missing_dataset_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = lanedet(&["train", "--data", s(&dir.path().join("nope")), "--out", s(&dir.path().join("m"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn zero_learning_rate_keeps_initial_weights() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d", 4, 1);
    let model = dir.path().join("m.ldnw");
    train(&data, &model, &["--lr", "0", "--seed", "5"]);
    let cfg = ModelConfig::new(32, 48).with_seed(5);
    let (_, init) = LaneNet::build::<f32>(&cfg).unwrap();
    let (_, trained) = load_weights(&model, &cfg).unwrap();
    for (a, b) in trained.entries().iter().zip(init.entries()) {
        if a.kind == ParamKind::Weight {
            assert_eq!(a.tensor, b.tensor, "{}", a.name);
        }
    }
    assert!(Path::new(&format!("{}.log.tsv", s(&model))).exists());
}

#[test]
fn train_and_infer_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d", 4, 2);
    let (m1, m2) = (dir.path().join("1.ldnw"), dir.path().join("2.ldnw"));
    train(&data, &m1, &["--flip", "--seed", "3"]);
    train(&data, &m2, &["--flip", "--seed", "3"]);
    assert_eq!(std::fs::read(&m1).unwrap(), std::fs::read(&m2).unwrap());

    let image = data.join("images/00000.ppm");
    let run = |tag: &str| {
        let prob = dir.path().join(format!("{tag}.pgm"));
        let lines = dir.path().join(format!("{tag}.lines.txt"));
        let overlay = dir.path().join(format!("{tag}.ppm"));
        let stdout = ok(&[
            "infer", "--model", s(&m1), "--image", s(&image), "--out-prob", s(&prob), "--out-lines", s(&lines),
            "--overlay", s(&overlay),
        ]);
        (stdout, std::fs::read(prob).unwrap(), std::fs::read(lines).unwrap(), std::fs::read(overlay).unwrap())
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn infer_with_no_confident_lane_writes_empty_lines() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d", 2, 6);
    let model = dir.path().join("m.ldnw");
    train(&data, &model, &["--max-steps", "1"]);
    // shut the existence gate by hand
    let meta = read_checkpoint_meta(&model).unwrap();
    let (_, mut params) = load_weights(&model, &meta.model).unwrap();
    for e in params.entries_mut().iter_mut().filter(|e| e.name == "exist.fc2.bias") {
        e.tensor = e.tensor.map(|_| -1e4);
    }
    save_weights(&params, &model).unwrap();

    let lines = dir.path().join("out.lines.txt");
    let stdout = ok(&[
        "infer", "--model", s(&model), "--image", s(&data.join("images/00001.ppm")), "--out-lines", s(&lines),
    ]);
    assert!(stdout.starts_with("0 lane(s)"), "{stdout}");
    assert_eq!(std::fs::read_to_string(lines).unwrap(), "");
}

/// Copies every `.lines.txt` annotation into a mirrored prediction tree.
fn ground_truth_as_predictions(data: &Path, pred: &Path) {
    std::fs::create_dir_all(pred.join("images")).unwrap();
    for e in std::fs::read_dir(data.join("images")).unwrap() {
        let p = e.unwrap().path();
        let name = p.file_name().unwrap().to_str().unwrap();
        if let Some(stem) = name.strip_suffix(".lines.txt") {
            std::fs::copy(&p, pred.join("images").join(format!("{stem}.pred.txt"))).unwrap();
        }
    }
}

#[test]
fn ground_truth_scores_perfectly_against_itself() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d", 6, 7);
    let pred = dir.path().join("pred");
    ground_truth_as_predictions(&data, &pred);
    let report = dir.path().join("report.txt");
    let stdout = ok(&["eval", "--pred", s(&pred), "--data", s(&data), "--report", s(&report)]);
    assert_eq!(std::fs::read_to_string(&report).unwrap(), stdout);
    let summary = EvalReport::parse_summary(&stdout);
    assert_eq!(summary["total.f1"], "1.000000");
    assert_eq!(summary["total.fp"], "0");
    assert_eq!(summary["missing_predictions"], "0");

    let strict = ok(&["eval", "--pred", s(&pred), "--data", s(&data), "--iou", "0.9"]);
    assert_eq!(EvalReport::parse_summary(&strict)["iou_threshold"], "0.9");
}

#[test]
fn eval_needs_exactly_one_source() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d", 1, 0);
    assert_eq!(lanedet(&["eval", "--data", s(&data)]).status.code(), Some(1));
    let p = s(&data);
    assert_eq!(lanedet(&["eval", "--data", p, "--pred", p, "--model", p]).status.code(), Some(1));
}

#[test]
fn eval_scores_a_model_directly() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d", 3, 8);
    let model = dir.path().join("m.ldnw");
    train(&data, &model, &["--max-steps", "1"]);
    let stdout = ok(&["eval", "--model", s(&model), "--data", s(&data)]);
    let summary = EvalReport::parse_summary(&stdout);
    assert_eq!(summary["missing_predictions"], "0");
    let images: usize = summary["total.images"].parse().unwrap();
    let cross: usize = summary["crossroad.images"].parse().unwrap();
    assert_eq!(images + cross, 3);
}

#[test]
fn gradcheck_exit_codes() {
    let pass = lanedet(&["gradcheck", "--scope", "layer.sigmoid"]);
    assert!(pass.status.success(), "{}", String::from_utf8_lossy(&pass.stderr));
    let fail = lanedet(&["gradcheck", "--scope", "layer.conv2d.0", "--tol", "1e-14", "--stencil", "central"]);
    assert_eq!(fail.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&fail.stderr).contains("FAIL"));
}
