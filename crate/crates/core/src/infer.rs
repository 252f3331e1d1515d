//! Single-image inference: resize, forward, lane extraction, and the
//! probability-map and overlay renderings.

use std::path::Path;

use crate::data::image::probability_map;
use crate::data::lane::LanePolyline;
use crate::data::resize::{coord_scale, resize_bilinear};
use crate::data::{render_polyline, Image};
use crate::error::{Error, Result};
use crate::eval::{extract_lanes, ExtractedLane, ExtractionConfig};
use crate::network::{load_weights, LaneNet, ModelConfig};
use crate::numerics::{self, Mode};
use crate::params::ModelParams;
use crate::train::read_checkpoint_meta;

/// Overlay colours by lane class (1-based): red, green, blue, yellow, then
/// repeating.
pub const LANE_COLORS: [[u8; 3]; 4] = [[255, 0, 0], [0, 255, 0], [0, 96, 255], [255, 220, 0]];

pub struct Predictor {
    pub net: LaneNet,
    pub params: ModelParams<f32>,
    pub extraction: ExtractionConfig,
}

#[derive(Clone, Debug)]
pub struct Prediction {
    /// Lanes in network-input coordinates.
    pub lanes: Vec<ExtractedLane>,
    /// Lanes in the original image's coordinates.
    pub original_lanes: Vec<LanePolyline>,
    pub exist_probs: Vec<f32>,
    /// Per-pixel maximum lane probability at network resolution.
    pub prob_map: Image,
    /// The resized input with the lanes drawn on it.
    pub overlay: Image,
}

impl Predictor {
    pub fn new(net: LaneNet, params: ModelParams<f32>) -> Self {
        Predictor {
            net,
            params,
            extraction: ExtractionConfig::default(),
        }
    }

    /// Loads a weight file and the model configuration from its sidecar.
    pub fn load(weights: &Path) -> Result<Self> {
        let meta = read_checkpoint_meta(weights)?;
        Self::load_with(weights, &meta.model)
    }

    pub fn load_with(weights: &Path, config: &ModelConfig) -> Result<Self> {
        let (net, params) = load_weights(weights, config)?;
        Ok(Self::new(net, params))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.net.config
    }

    pub fn predict(&self, image: &Image) -> Result<Prediction> {
        if image.channels != 3 {
            return Err(Error::shape(
                "Predictor::predict",
                format!("expected an RGB image, got {} channel(s)", image.channels),
            ));
        }
        let (h, w) = (self.config().input_h, self.config().input_w);
        let resized = resize_bilinear(&image.to_tensor(), h, w)?;
        let input = resized.clone().reshape(&[1, 3, h, w])?;
        let output = self.net.forward(&self.params, &input, Mode::Infer)?.into_output();
        let lanes = extract_lanes(&output, &self.extraction)?.pop().unwrap_or_default();

        let probs = numerics::channel_softmax_forward(&output.seg_logits)?;
        let classes = probs.shape()[1];
        let plane = h * w;
        let p = probs.data();
        let max_lane: Vec<f32> = (0..plane)
            .map(|i| (1..classes).map(|c| p[c * plane + i]).fold(0.0, f32::max))
            .collect();

        let mut overlay = Image::from_tensor(&resized)?;
        draw_lanes(&mut overlay, &lanes);

        let (sx, sy) = (coord_scale(w, image.width), coord_scale(h, image.height));
        Ok(Prediction {
            original_lanes: lanes.iter().map(|l| l.polyline.scaled(sx, sy)).collect(),
            lanes,
            exist_probs: output.exist_probs.into_data(),
            prob_map: probability_map(&max_lane, h, w)?,
            overlay,
        })
    }
}

/// Paints each lane in its class colour with a stroke of about 1% of the
/// image width (at least 2 px).
pub fn draw_lanes(image: &mut Image, lanes: &[ExtractedLane]) {
    let width = (image.width as f64 / 100.0).max(2.0);
    for lane in lanes {
        let color = LANE_COLORS[(lane.class.max(1) - 1) % LANE_COLORS.len()];
        let mask = render_polyline(lane.polyline.points(), image.height, image.width, width);
        for (i, on) in mask.into_iter().enumerate() {
            if on {
                image.data[i * 3..i * 3 + 3].copy_from_slice(&color);
            }
        }
    }
}
