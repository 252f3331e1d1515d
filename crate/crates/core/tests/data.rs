mod common;

use common::oracles::{distance_to_polyline, mean_horizontal_deviation};
use lanedet::data::culane::write_culane_dataset;
use lanedet::data::resize::resize_nearest;
use lanedet::data::synth::{generate_with, SynthConfig};
use lanedet::data::{
    generate_synthetic, load_all, load_culane_index, parse_lines, rasterize_lanes, read_image, write_image, Category,
    LanePolyline,
};
use lanedet::eval::{extract_from_probs, ExtractionConfig};
use lanedet::Error;
use proptest::prelude::*;

#[test]
fn synthesis_is_seeded() {
    let a = generate_synthetic(3, 4, 64, 128).unwrap();
    let b = generate_synthetic(3, 4, 64, 128).unwrap();
    let c = generate_synthetic(4, 4, 64, 128).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.sample, y.sample);
        assert_eq!(x.lanes, y.lanes);
    }
    assert_ne!(a[0].sample, c[0].sample);
    // scene i depends only on (seed, i)
    let longer = generate_synthetic(3, 6, 64, 128).unwrap();
    assert_eq!(longer[3].sample, a[3].sample);
}

#[test]
fn bad_synthesis_requests_are_rejected() {
    assert!(matches!(generate_synthetic(0, 0, 64, 128), Err(Error::Config(_))));
    assert!(matches!(generate_synthetic(0, 1, 60, 128), Err(Error::Config(_))));
}

#[test]
fn lane_classes_increase_left_to_right() {
    for scene in generate_synthetic(11, 20, 96, 256).unwrap() {
        assert!(scene.sample.is_consistent());
        assert!(scene.classes.windows(2).all(|c| c[0] < c[1]));
        let bottoms: Vec<f64> = scene.lanes.iter().map(|l| l.bottom().0).collect();
        assert!(bottoms.windows(2).all(|b| b[0] < b[1]));
        for &class in &scene.classes {
            assert_eq!(scene.sample.exist[class as usize - 1], 1);
        }
        let n = scene.sample.exist.iter().filter(|&&e| e == 1).count();
        assert_eq!(n, scene.lanes.len());
        if scene.category != Category::Crossroad {
            assert!((2..=4).contains(&n));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn mask_pixels_hug_their_polyline(seed in any::<u64>()) {
        let cfg = SynthConfig::new(48, 128);
        let scene = generate_with(&cfg, seed, 1).unwrap().remove(0);
        let w = cfg.width;
        for (i, &m) in scene.sample.label_mask.iter().enumerate() {
            if m == 0 {
                continue;
            }
            let k = scene.classes.iter().position(|&c| c == m).unwrap();
            let d = distance_to_polyline((i % w) as f64, (i / w) as f64, scene.lanes[k].points());
            prop_assert!(d <= cfg.stroke() / 2.0 + 0.71, "pixel {i} at {d}");
        }
    }

    #[test]
    fn lines_format_round_trips(pts in prop::collection::vec((0.0f64..800.0, 0.0f64..1.0), 2..8)) {
        let mut y = 0.0;
        let points: Vec<(f64, f64)> = pts.iter().map(|&(x, dy)| { y += 1.0 + dy * 20.0; ((x * 1000.0).round() / 1000.0, (y * 1000.0f64).round() / 1000.0) }).collect();
        let lane = LanePolyline::new(points).unwrap();
        let text = lanedet::data::format_lines(std::slice::from_ref(&lane));
        let parsed = parse_lines(&text, "t").unwrap();
        prop_assert_eq!(parsed.len(), 1);
        for (a, b) in parsed[0].points().iter().zip(lane.points()) {
            prop_assert!((a.0 - b.0).abs() < 1e-9 && (a.1 - b.1).abs() < 1e-9);
        }
    }
}

#[test]
fn dataset_round_trips_through_the_loader() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        crossroad_fraction: 0.3,
        ..SynthConfig::new(64, 160)
    };
    let scenes = generate_with(&cfg, 9, 10).unwrap();
    write_culane_dataset(dir.path(), &scenes).unwrap();

    let index = load_culane_index(&dir.path().join("list/train.txt")).unwrap();
    let report = load_all(&index, 64, 160);
    assert!(report.errors.is_empty(), "{:?}", report.errors);
    assert_eq!(report.samples.len(), scenes.len());
    for ((i, sample), scene) in report.samples.iter().zip(&scenes) {
        assert_eq!(sample.label_mask, scene.sample.label_mask, "scene {i}");
        assert_eq!(sample.exist, scene.sample.exist);
        assert_eq!(sample.image, scene.sample.image);
    }

    let test = load_culane_index(&dir.path().join("list/test.txt")).unwrap();
    for (entry, scene) in test.entries.iter().zip(&scenes) {
        assert_eq!(entry.category_or_default(), scene.category);
        assert_eq!(read_image(&entry.image).unwrap(), scene.image);
        assert_eq!(entry.read_lanes().unwrap().len(), scene.lanes.len());
    }
}

#[test]
fn loader_reports_instead_of_skipping() {
    let dir = tempfile::tempdir().unwrap();
    let scenes = generate_synthetic(2, 3, 32, 64).unwrap();
    write_culane_dataset(dir.path(), &scenes).unwrap();
    std::fs::remove_file(dir.path().join("images/00001.ppm")).unwrap();
    let index = load_culane_index(&dir.path().join("list/train.txt")).unwrap();
    let report = load_all(&index, 32, 64);
    assert_eq!(report.samples.len() + report.errors.len(), index.len());
    assert_eq!(report.errors.len(), 1);
    assert_eq!(report.errors[0].0, 1);
}

#[test]
fn listed_flags_must_agree_with_the_mask() {
    let dir = tempfile::tempdir().unwrap();
    let scenes = generate_synthetic(2, 1, 32, 64).unwrap();
    write_culane_dataset(dir.path(), &scenes).unwrap();
    let list = dir.path().join("list/train.txt");
    let wrong: Vec<String> = scenes[0].sample.exist.iter().map(|e| (1 - e).to_string()).collect();
    std::fs::write(&list, format!("/images/00000.ppm /labels/00000.pgm {}\n", wrong.join(" "))).unwrap();
    let index = load_culane_index(&list).unwrap();
    let report = load_all(&index, 32, 64);
    assert!(matches!(report.errors[..], [(0, Error::Label(_))]), "{:?}", report.errors);
}

#[test]
fn malformed_list_line_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("list")).unwrap();
    let list = dir.path().join("list/test.txt");
    std::fs::write(&list, "/a.ppm\n/b.ppm /b.pgm 1 0\n").unwrap();
    let err = load_culane_index(&list).unwrap_err();
    assert!(err.to_string().contains("test.txt:2"), "{err}");
}

#[test]
fn missing_annotation_means_no_lanes() {
    let dir = tempfile::tempdir().unwrap();
    let scenes = generate_synthetic(5, 1, 32, 64).unwrap();
    write_culane_dataset(dir.path(), &scenes).unwrap();
    std::fs::remove_file(dir.path().join("images/00000.lines.txt")).unwrap();
    let index = load_culane_index(&dir.path().join("list/test.txt")).unwrap();
    assert!(index.entries[0].read_lanes().unwrap().is_empty());
}

#[test]
fn image_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let scene = generate_synthetic(1, 1, 32, 48).unwrap().remove(0);
    let path = dir.path().join("x.ppm");
    write_image(&path, &scene.image).unwrap();
    assert_eq!(read_image(&path).unwrap(), scene.image);
    std::fs::write(&path, b"P3\n1 1\n255\n000").unwrap();
    assert!(matches!(read_image(&path), Err(Error::Format { .. })));
}

/// 2×2 majority vote, ties to background.
fn downsample_majority(mask: &[u8], h: usize, w: usize) -> Vec<u8> {
    let mut out = vec![0u8; (h / 2) * (w / 2)];
    for r in 0..h / 2 {
        for c in 0..w / 2 {
            let mut votes = [0usize; 256];
            for (dr, dc) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                votes[mask[(2 * r + dr) * w + 2 * c + dc] as usize] += 1;
            }
            let (best, n) = votes.iter().enumerate().skip(1).max_by_key(|&(k, n)| (*n, std::cmp::Reverse(k))).unwrap();
            out[r * (w / 2) + c] = if *n >= 2 { best as u8 } else { 0 };
        }
    }
    out
}

#[test]
fn rasterization_is_resolution_covariant() {
    let (h, w) = (96, 256);
    for scene in generate_synthetic(21, 12, h, w).unwrap() {
        let stroke = 8.0;
        let direct = rasterize_lanes(&scene.lanes, h, w, stroke);
        // pixel (r, c) covers fine pixels 2r..2r+1, centred at 2r + 0.5
        let doubled: Vec<LanePolyline> = scene
            .lanes
            .iter()
            .map(|l| LanePolyline::new(l.points().iter().map(|&(x, y)| (2.0 * x + 0.5, 2.0 * y + 0.5)).collect()).unwrap())
            .collect();
        let fine = rasterize_lanes(&doubled, 2 * h, 2 * w, 2.0 * stroke);
        let voted = downsample_majority(&fine, 2 * h, 2 * w);
        let lane_pixels = direct.iter().filter(|&&m| m != 0).count();
        let agree = direct.iter().zip(&voted).filter(|(a, b)| **a != 0 && a == b).count();
        if lane_pixels > 0 {
            assert!(agree as f64 >= 0.95 * lane_pixels as f64, "{agree}/{lane_pixels}");
        }
    }
}

#[test]
fn nearest_resize_keeps_class_ids() {
    let scene = generate_synthetic(4, 1, 64, 128).unwrap().remove(0);
    let half = resize_nearest(&scene.sample.label_mask, 64, 128, 32, 64);
    assert!(half.iter().all(|&m| m <= 4));
    let classes = |m: &[u8]| {
        let mut v: Vec<u8> = m.iter().copied().filter(|&c| c != 0).collect();
        v.sort();
        v.dedup();
        v
    };
    assert_eq!(classes(&half), classes(&scene.sample.label_mask));
}

/// A probability map per lane: the lane line blurred by a Gaussian of
/// `sigma` px, i.e. `exp(−d²/2σ²)` of the distance to the polyline.
fn blurred_probs(lanes: &[LanePolyline], h: usize, w: usize, sigma: f64) -> Vec<f32> {
    let mut probs = vec![0f32; 5 * h * w];
    for (k, lane) in lanes.iter().enumerate() {
        for i in 0..h * w {
            let d = distance_to_polyline((i % w) as f64, (i / w) as f64, lane.points());
            probs[(k + 1) * h * w + i] = (-d * d / (2.0 * sigma * sigma)).exp() as f32;
        }
    }
    for i in 0..h * w {
        let lane: f32 = (1..5).map(|k| probs[k * h * w + i]).sum();
        probs[i] = (1.0 - lane).max(0.0);
    }
    probs
}

#[test]
fn extraction_recovers_blurred_lanes() {
    let (h, w) = (96, 256);
    for scene in generate_synthetic(8, 6, h, w).unwrap() {
        let probs = blurred_probs(&scene.lanes, h, w, 2.0);
        let exist: Vec<f32> = (0..4).map(|k| if k < scene.lanes.len() { 1.0 } else { 0.0 }).collect();
        let lanes = extract_from_probs(&probs, &exist, h, w, &ExtractionConfig::default()).unwrap();
        assert_eq!(lanes.len(), scene.lanes.len());
        for (got, want) in lanes.iter().zip(&scene.lanes) {
            let dev = mean_horizontal_deviation(got.polyline.points(), want.points()).unwrap();
            assert!(dev <= 2.0, "deviation {dev}");
        }
    }
}
