//! A six-image evaluation set with hand-planted prediction errors, written
//! in CULane layout with a directory of `.pred.txt` predictions.
#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

pub const HEIGHT: usize = 120;
pub const WIDTH: usize = 200;
pub const RENDER_WIDTH: f64 = 8.0;

/// Hand-counted outcome of [`write`].
#[derive(Debug, Clone, Copy)]
pub struct Planted {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub crossroad_fp: usize,
}

pub struct PlantedSet {
    pub root: PathBuf,
    pub list: PathBuf,
    pub pred_dir: PathBuf,
    pub expected: Planted,
}

fn lane(x_bottom: f64, x_top: f64) -> Vec<(f64, f64)> {
    (0..=6)
        .map(|i| {
            let t = i as f64 / 6.0;
            (x_bottom + (x_top - x_bottom) * t, (HEIGHT - 1) as f64 * (1.0 - t))
        })
        .collect()
}

fn lines_text(lanes: &[Vec<(f64, f64)>]) -> String {
    lanes
        .iter()
        .map(|l| {
            let pts: Vec<String> = l.iter().map(|(x, y)| format!("{x:.3} {y:.3}")).collect();
            pts.join(" ") + "\n"
        })
        .collect()
}

fn shifted(lanes: &[Vec<(f64, f64)>], dx: f64) -> Vec<Vec<(f64, f64)>> {
    lanes.iter().map(|l| l.iter().map(|&(x, y)| (x + dx, y)).collect()).collect()
}

fn write_ppm(path: &Path) {
    let mut bytes = format!("P6\n{WIDTH} {HEIGHT}\n255\n").into_bytes();
    bytes.extend(std::iter::repeat_n(90u8, WIDTH * HEIGHT * 3));
    fs::write(path, bytes).unwrap();
}

/// Image `k`'s ground truth, its prediction, and its category split name.
fn scene(k: usize) -> (Vec<Vec<(f64, f64)>>, Vec<Vec<(f64, f64)>>, &'static str) {
    let all = [lane(20.0, 80.0), lane(70.0, 95.0), lane(130.0, 105.0), lane(185.0, 120.0)];
    match k {
        // exact recovery, shifted by a pixel
        0 => (all[..3].to_vec(), shifted(&all[..3], 1.0), "normal"),
        // one missed lane
        1 => (all.to_vec(), shifted(&all[1..], -1.0), "normal"),
        // one hallucinated lane well away from both ground truths
        2 => (vec![all[0].clone(), all[3].clone()], vec![all[0].clone(), all[3].clone(), lane(110.0, 100.0)], "curve"),
        3 => (all[1..3].to_vec(), all[1..3].to_vec(), "night"),
        4 => (all.to_vec(), shifted(&all, 0.5), "shadow"),
        // crossroad: no lanes, two hallucinations
        _ => (Vec::new(), vec![all[0].clone(), all[2].clone()], "cross"),
    }
}

pub fn write(root: &Path) -> PlantedSet {
    let images = root.join("driver_1/clip");
    let pred_dir = root.join("pred");
    fs::create_dir_all(&images).unwrap();
    fs::create_dir_all(pred_dir.join("driver_1/clip")).unwrap();
    fs::create_dir_all(root.join("list/test_split")).unwrap();
    let mut list = String::new();
    let mut splits: std::collections::BTreeMap<&str, String> = Default::default();
    for k in 0..6 {
        let rel = format!("driver_1/clip/{k:03}.ppm");
        write_ppm(&root.join(&rel));
        let (gt, pred, split) = scene(k);
        fs::write(root.join(format!("driver_1/clip/{k:03}.lines.txt")), lines_text(&gt)).unwrap();
        fs::write(pred_dir.join(format!("driver_1/clip/{k:03}.pred.txt")), lines_text(&pred)).unwrap();
        list.push_str(&format!("/{rel}\n"));
        splits.entry(split).or_default().push_str(&format!("/{rel}\n"));
    }
    let names = [("normal", "test0_normal.txt"), ("curve", "test6_curve.txt"), ("night", "test8_night.txt"), ("shadow", "test3_shadow.txt"), ("cross", "test7_cross.txt")];
    for (key, file) in names {
        fs::write(root.join("list/test_split").join(file), &splits[key]).unwrap();
    }
    let list_path = root.join("list/test.txt");
    fs::write(&list_path, list).unwrap();
    PlantedSet {
        root: root.to_path_buf(),
        list: list_path,
        pred_dir,
        // 3 + 3 + 2 + 2 + 4 matched; one miss in image 1; one extra in image 2
        expected: Planted {
            tp: 14,
            fp: 1,
            fn_: 1,
            crossroad_fp: 2,
        },
    }
}
