use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::data::culane::{read_lanes_file, DatasetIndex, IndexEntry};
use crate::data::image::read_image_size;
use crate::data::lane::LanePolyline;
use crate::data::Category;
use crate::error::{Error, Result};
use crate::eval::report::{Counts, EvalReport};
use crate::eval::{match_lanes, render_lane};

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub render_width: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            iou_threshold: 0.5,
            render_width: 30.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageResult {
    pub category: Category,
    pub counts: Counts,
}

/// `<pred_dir>/<image path without extension>.pred.txt`.
pub fn prediction_path(pred_dir: &Path, entry: &IndexEntry) -> PathBuf {
    pred_dir.join(&entry.rel_path).with_extension("pred.txt")
}

/// Scores every indexed image. `predict` returns the predicted lanes in
/// original image coordinates, or `None` when no prediction exists (scored
/// as an empty prediction and listed in `missing_predictions`).
pub fn evaluate_dataset<F>(index: &DatasetIndex, config: &EvalConfig, predict: F) -> Result<EvalReport>
where
    F: Fn(&IndexEntry) -> Result<Option<Vec<LanePolyline>>> + Sync,
{
    if !(config.iou_threshold > 0.0 && config.iou_threshold <= 1.0) {
        return Err(Error::Config(format!("IoU threshold {} outside (0, 1]", config.iou_threshold)));
    }
    let results: Vec<Result<(ImageResult, bool)>> = index
        .entries
        .par_iter()
        .map(|entry| {
            let pred = predict(entry)?;
            let missing = pred.is_none();
            let counts = score_image(entry, &pred.unwrap_or_default(), config)?;
            Ok((
                ImageResult {
                    category: entry.category_or_default(),
                    counts,
                },
                missing,
            ))
        })
        .collect();
    let mut report = EvalReport::new(config.iou_threshold, config.render_width);
    for (entry, r) in index.entries.iter().zip(results) {
        let (res, missing) = r?;
        if missing {
            report.missing_predictions.push(entry.rel_path.clone());
        }
        report.add(res.category, res.counts);
    }
    Ok(report)
}

fn score_image(entry: &IndexEntry, pred: &[LanePolyline], config: &EvalConfig) -> Result<Counts> {
    let (h, w) = read_image_size(&entry.image)?;
    let gt = entry.read_lanes()?;
    let render = |lanes: &[LanePolyline]| {
        lanes
            .iter()
            .map(|l| render_lane(l.points(), h, w, config.render_width))
            .collect::<Result<Vec<_>>>()
    };
    let m = match_lanes(&render(pred)?, &render(&gt)?, config.iou_threshold)
        .map_err(|e| Error::format(entry.image.display().to_string(), e.to_string()))?;
    Ok(Counts {
        tp: m.tp,
        fp: m.fp,
        fn_: m.fn_,
    })
}

/// Prediction lookup for a directory of `.pred.txt` files. Fails, naming
/// the first offending path, when the directory holds predictions for
/// images that are not in the index.
pub fn read_prediction_dir(
    pred_dir: &Path,
    index: &DatasetIndex,
) -> Result<impl Fn(&IndexEntry) -> Result<Option<Vec<LanePolyline>>> + Sync> {
    let expected: BTreeSet<PathBuf> = index.entries.iter().map(|e| prediction_path(pred_dir, e)).collect();
    let mut found = Vec::new();
    collect_pred_files(pred_dir, &mut found)?;
    found.sort();
    if let Some(extra) = found.iter().find(|p| !expected.contains(*p)) {
        return Err(Error::format(
            extra.display().to_string(),
            "prediction file has no matching image in the index",
        ));
    }
    let dir = pred_dir.to_path_buf();
    Ok(move |entry: &IndexEntry| {
        let path = prediction_path(&dir, entry);
        if !path.exists() {
            return Ok(None);
        }
        read_lanes_file(&path).map(Some)
    })
}

fn collect_pred_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let read = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in read {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            collect_pred_files(&path, out)?;
        } else if path.to_string_lossy().ends_with(".pred.txt") {
            out.push(path);
        }
    }
    Ok(())
}
