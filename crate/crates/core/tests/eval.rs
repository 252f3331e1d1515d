mod common;

use common::oracles::brute_force_matches;
use common::planted;
use lanedet::data::{load_culane_index, Category};
use lanedet::eval::{compute_f1, evaluate_dataset, match_iou_matrix, read_prediction_dir, EvalConfig, EvalReport};
use proptest::prelude::*;

fn planted_report(dir: &std::path::Path) -> (EvalReport, planted::Planted) {
    let set = planted::write(dir);
    let index = load_culane_index(&set.list).unwrap();
    let config = EvalConfig {
        iou_threshold: 0.5,
        render_width: planted::RENDER_WIDTH,
    };
    let predict = read_prediction_dir(&set.pred_dir, &index).unwrap();
    (evaluate_dataset(&index, &config, predict).unwrap(), set.expected)
}

#[test]
fn planted_faults_are_counted_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let (report, want) = planted_report(dir.path());
    let total = report.total();
    assert_eq!((total.tp, total.fp, total.fn_), (want.tp, want.fp, want.fn_));
    assert_eq!(report.crossroad_fp(), want.crossroad_fp);
    assert_eq!(report.category(Category::Curve).counts.fp, 1);
    assert_eq!(report.category(Category::Normal).counts.fn_, 1);
    assert_eq!(report.total_images(), 6);
    assert!(report.missing_predictions.is_empty());
}

#[test]
fn report_arithmetic_on_planted_counts() {
    let dir = tempfile::tempdir().unwrap();
    let (report, _) = planted_report(dir.path());
    let summary = EvalReport::parse_summary(&report.to_text());
    // 14 tp, 1 fp, 1 fn → precision = recall = f1 = 14/15
    let f = |k: &str| summary[k].parse::<f64>().unwrap();
    for key in ["total.precision", "total.recall", "total.f1"] {
        assert!((f(key) - 14.0 / 15.0).abs() < 1e-6, "{key}");
    }
    // curve: 2 tp, 1 fp, 0 fn
    assert!((f("curve.precision") - 2.0 / 3.0).abs() < 1e-6);
    assert!((f("curve.recall") - 1.0).abs() < 1e-6);
    assert!((f("curve.f1") - 0.8).abs() < 1e-6);
    assert_eq!(summary["crossroad.fp"], "2");
}

#[test]
fn rows_follow_the_published_category_order() {
    let dir = tempfile::tempdir().unwrap();
    let (report, _) = planted_report(dir.path());
    let rows: Vec<String> = report
        .to_text()
        .lines()
        .skip(2)
        .take(10)
        .map(|l| l.split("  ").next().unwrap().trim().to_string())
        .collect();
    let want = [
        "Normal",
        "Crowded",
        "Night",
        "No line",
        "Shadow",
        "Arrow",
        "Dazzle light",
        "Curve",
        "Crossroad",
        "Total",
    ];
    assert_eq!(rows, want);
}

#[test]
fn stray_prediction_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let set = planted::write(dir.path());
    std::fs::write(set.pred_dir.join("driver_1/clip/999.pred.txt"), "").unwrap();
    let index = load_culane_index(&set.list).unwrap();
    let err = read_prediction_dir(&set.pred_dir, &index).err().unwrap();
    assert!(err.to_string().contains("999.pred.txt"), "{err}");
}

#[test]
fn missing_predictions_count_as_misses() {
    let dir = tempfile::tempdir().unwrap();
    let set = planted::write(dir.path());
    std::fs::remove_file(set.pred_dir.join("driver_1/clip/004.pred.txt")).unwrap();
    let index = load_culane_index(&set.list).unwrap();
    let predict = read_prediction_dir(&set.pred_dir, &index).unwrap();
    let report = evaluate_dataset(&index, &EvalConfig { iou_threshold: 0.5, render_width: 8.0 }, predict).unwrap();
    assert_eq!(report.missing_predictions, vec!["driver_1/clip/004.ppm".to_string()]);
    assert_eq!(report.category(Category::Shadow).counts.fn_, 4);
}

#[test]
fn crossed_assignment_takes_the_better_pairing() {
    // pred 0 overlaps gt 1 better and pred 1 overlaps gt 0 better
    let iou = vec![vec![0.55, 0.9], vec![0.8, 0.6]];
    let m = match_iou_matrix(&iou, 2, 0.5).unwrap();
    assert_eq!(m.tp, brute_force_matches(&iou, 0.5));
    let mut pairs: Vec<_> = m.pairs.iter().map(|&(p, g, _)| (p, g)).collect();
    pairs.sort();
    assert_eq!(pairs, vec![(0, 1), (1, 0)]);
}

#[test]
fn f1_formulae() {
    let (p, r, f) = compute_f1(6, 2, 4);
    assert!((p - 0.75).abs() < 1e-15);
    assert!((r - 0.6).abs() < 1e-15);
    assert!((f - 2.0 * 0.75 * 0.6 / 1.35).abs() < 1e-15);
    assert_eq!(compute_f1(0, 0, 0), (0.0, 0.0, 0.0));
}

proptest! {
    #[test]
    fn matching_equals_permutation_search(
        preds in 0usize..5, gts in 0usize..5,
        raw in prop::collection::vec(0.0f64..1.0, 25),
        threshold in 0.1f64..0.9,
    ) {
        let iou: Vec<Vec<f64>> = (0..preds).map(|p| (0..gts).map(|g| raw[p * 5 + g]).collect()).collect();
        let m = match_iou_matrix(&iou, gts, threshold).unwrap();
        prop_assert_eq!(m.tp, brute_force_matches(&iou, threshold));
        prop_assert_eq!(m.tp + m.fp, preds);
        prop_assert_eq!(m.tp + m.fn_, gts);
    }
}
