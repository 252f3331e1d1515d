//! Lane scoring: key-point extraction from the network output, 30-px
//! stroke rendering, mask IoU, optimal matching and precision/recall/F1.

mod dataset;
mod report;

pub use dataset::{evaluate_dataset, prediction_path, read_prediction_dir, EvalConfig, ImageResult};
pub use report::{CategoryCounts, Counts, EvalReport};

use crate::data::lane::{render_polyline, LanePolyline};
use crate::error::{Error, Result};
use crate::network::ModelOutput;
use crate::numerics;

#[derive(Clone, Debug, PartialEq)]
pub struct ExtractionConfig {
    pub exist_threshold: f64,
    pub prob_threshold: f64,
    /// Row step; `None` uses `H / 32` (at least 1).
    pub row_stride: Option<usize>,
    pub min_points: usize,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        ExtractionConfig {
            exist_threshold: 0.5,
            prob_threshold: 0.3,
            row_stride: None,
            min_points: 2,
        }
    }
}

impl ExtractionConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("exist_threshold", self.exist_threshold), ("prob_threshold", self.prob_threshold)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("{name} {v} outside (0, 1)")));
            }
        }
        if self.row_stride == Some(0) {
            return Err(Error::Config("row_stride must be >= 1".into()));
        }
        Ok(())
    }

    pub fn stride_for(&self, h: usize) -> usize {
        self.row_stride.unwrap_or(h / 32).max(1)
    }
}

/// A lane recovered from one output channel.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtractedLane {
    /// Segmentation class (1-based lane index).
    pub class: usize,
    pub polyline: LanePolyline,
}

/// Extracts lanes from every image of a batch. Lane probabilities are the
/// channel softmax of the logits.
pub fn extract_lanes(output: &ModelOutput<f32>, config: &ExtractionConfig) -> Result<Vec<Vec<ExtractedLane>>> {
    config.validate()?;
    let probs = numerics::channel_softmax_forward(&output.seg_logits)?;
    let (n, c, h, w) = probs.dims4("extract_lanes")?;
    let lanes = c - 1;
    output
        .exist_probs
        .expect_shape("extract_lanes", "exist_probs", &[n, lanes])?;
    let plane = c * h * w;
    (0..n)
        .map(|b| {
            let exist = &output.exist_probs.data()[b * lanes..(b + 1) * lanes];
            extract_from_probs(&probs.data()[b * plane..(b + 1) * plane], exist, h, w, config)
        })
        .collect()
}

/// Single-image extraction from a `classes × H × W` probability map.
///
/// For every lane channel whose existence probability reaches the
/// threshold, rows are sampled from the bottom upwards; each row keeps its
/// arg-max column (first on ties) when that probability reaches
/// `prob_threshold`. Channels with fewer than `min_points` surviving points
/// produce nothing.
pub fn extract_from_probs(
    probs: &[f32],
    exist: &[f32],
    h: usize,
    w: usize,
    config: &ExtractionConfig,
) -> Result<Vec<ExtractedLane>> {
    let classes = exist.len() + 1;
    if probs.len() != classes * h * w {
        return Err(Error::shape(
            "extract_from_probs",
            format!("{} probabilities for {classes}x{h}x{w}", probs.len()),
        ));
    }
    let stride = config.stride_for(h);
    let mut out = Vec::new();
    for (lane, &e) in exist.iter().enumerate() {
        if (e as f64) < config.exist_threshold {
            continue;
        }
        let channel = &probs[(lane + 1) * h * w..(lane + 2) * h * w];
        let mut points = Vec::new();
        let mut row = h as isize - 1;
        while row >= 0 {
            let r = row as usize;
            let line = &channel[r * w..(r + 1) * w];
            let (col, &p) = line
                .iter()
                .enumerate()
                .fold((0, &line[0]), |best, cur| if cur.1 > best.1 { cur } else { best });
            if p as f64 >= config.prob_threshold {
                points.push((col as f64, r as f64));
            }
            row -= stride as isize;
        }
        if points.len() >= config.min_points.max(2) {
            points.reverse();
            out.push(ExtractedLane {
                class: lane + 1,
                polyline: LanePolyline::new(points)?,
            });
        }
    }
    Ok(out)
}

/// Every pixel whose center is within `width / 2` of the polyline.
pub fn render_lane(points: &[(f64, f64)], h: usize, w: usize, width: f64) -> Result<Vec<bool>> {
    if points.len() < 2 {
        return Err(Error::Label(format!("cannot render a lane with {} point(s)", points.len())));
    }
    if !(width >= 1.0) {
        return Err(Error::Config(format!("render width {width} must be >= 1")));
    }
    Ok(render_polyline(points, h, w, width))
}

/// `|a ∧ b| / |a ∨ b|`, zero when both are empty.
pub fn mask_iou(a: &[bool], b: &[bool]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("mask_iou", format!("masks of {} and {} pixels", a.len(), b.len())));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
}

pub const MAX_MATCH_LANES: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct MatchResult {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    /// `(prediction, ground truth, iou)` for every matched pair.
    pub pairs: Vec<(usize, usize, f64)>,
}

/// Optimal one-to-one matching over an IoU matrix (`iou[pred][gt]`). A pair
/// qualifies when its IoU reaches `threshold`. The chosen assignment
/// maximizes the number of qualifying pairs, then their total IoU, then
/// prefers lower ground-truth indices for earlier predictions.
pub fn match_iou_matrix(iou: &[Vec<f64>], gts: usize, threshold: f64) -> Result<MatchResult> {
    let preds = iou.len();
    if preds > MAX_MATCH_LANES || gts > MAX_MATCH_LANES {
        return Err(Error::Config(format!(
            "matching supports at most {MAX_MATCH_LANES} lanes per side, got {preds} predictions and {gts} ground truths"
        )));
    }
    if let Some(row) = iou.iter().find(|r| r.len() != gts) {
        return Err(Error::shape("match_lanes", format!("IoU row of {} for {gts} ground truths", row.len())));
    }
    struct Search<'a> {
        iou: &'a [Vec<f64>],
        threshold: f64,
        used: Vec<bool>,
        current: Vec<Option<usize>>,
        best: (usize, f64, Vec<Option<usize>>),
    }
    impl Search<'_> {
        fn run(&mut self, p: usize, count: usize, total: f64) {
            if p == self.iou.len() {
                let (bc, bt, _) = &self.best;
                if count > *bc || (count == *bc && total > *bt) {
                    self.best = (count, total, self.current.clone());
                }
                return;
            }
            for g in 0..self.used.len() {
                let v = self.iou[p][g];
                if !self.used[g] && v >= self.threshold {
                    self.used[g] = true;
                    self.current[p] = Some(g);
                    self.run(p + 1, count + 1, total + v);
                    self.used[g] = false;
                    self.current[p] = None;
                }
            }
            self.run(p + 1, count, total);
        }
    }
    let mut s = Search {
        iou,
        threshold,
        used: vec![false; gts],
        current: vec![None; preds],
        best: (0, f64::NEG_INFINITY, vec![None; preds]),
    };
    s.run(0, 0, 0.0);
    let pairs: Vec<_> = s
        .best
        .2
        .iter()
        .enumerate()
        .filter_map(|(p, g)| g.map(|g| (p, g, iou[p][g])))
        .collect();
    let tp = pairs.len();
    Ok(MatchResult {
        tp,
        fp: preds - tp,
        fn_: gts - tp,
        pairs,
    })
}

/// Matches rendered prediction masks against rendered ground-truth masks.
pub fn match_lanes(pred: &[Vec<bool>], gt: &[Vec<bool>], iou_threshold: f64) -> Result<MatchResult> {
    if pred.len() > MAX_MATCH_LANES || gt.len() > MAX_MATCH_LANES {
        return match_iou_matrix(&vec![Vec::new(); pred.len()], gt.len(), iou_threshold);
    }
    let iou = pred
        .iter()
        .map(|p| gt.iter().map(|g| mask_iou(p, g)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    match_iou_matrix(&iou, gt.len(), iou_threshold)
}

/// `(precision, recall, f1)`; any `0 / 0` is 0.
pub fn compute_f1(tp: usize, fp: usize, fn_: usize) -> (f64, f64, f64) {
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let recall = ratio(tp, tp + fn_);
    let precision = ratio(tp, tp + fp);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    (precision, recall, f1)
}
