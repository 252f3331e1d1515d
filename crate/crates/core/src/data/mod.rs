//! Image and annotation IO, label rasterization, the synthetic scene
//! generator, and the CULane-style dataset layout.

pub mod culane;
pub mod image;
pub mod lane;
pub mod resize;
pub mod synth;

pub use culane::{load_all, load_culane_index, load_sample, Category, DatasetIndex, IndexEntry, LoadReport};
pub use image::{read_image, read_mask, write_image, Image};
pub use lane::{format_lines, parse_lines, rasterize_lanes, render_polyline, LanePolyline};
pub use synth::{generate_synthetic, SynthConfig, SyntheticScene};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One training example.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `3 × H × W`, values in `[0, 1]`.
    pub image: Tensor<f32>,
    /// `H × W` class ids, 0 background, `1..=lanes` lanes left to right.
    pub label_mask: Vec<u8>,
    /// `exist[i] == 1` iff class `i + 1` occurs in `label_mask`.
    pub exist: Vec<u8>,
}

impl Sample {
    pub fn new(image: Tensor<f32>, label_mask: Vec<u8>, lanes: usize) -> Result<Self> {
        let (h, w) = match *image.shape() {
            [3, h, w] => (h, w),
            _ => return Err(Error::shape("Sample::new", format!("image must be 3×H×W, got {:?}", image.shape()))),
        };
        if label_mask.len() != h * w {
            return Err(Error::shape(
                "Sample::new",
                format!("mask has {} pixels, image has {h}x{w}", label_mask.len()),
            ));
        }
        if let Some(&bad) = label_mask.iter().find(|&&m| m as usize > lanes) {
            return Err(Error::Label(format!("class id {bad} exceeds lane count {lanes}")));
        }
        let exist = lane::exist_from_mask(&label_mask, lanes);
        Ok(Sample {
            image,
            label_mask,
            exist,
        })
    }

    pub fn height(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[2]
    }

    pub fn is_consistent(&self) -> bool {
        lane::exist_from_mask(&self.label_mask, self.exist.len()) == self.exist
    }

    /// Mirror left-right. Lane slots mirror too: class `c` becomes
    /// `lanes + 1 − c`, so ids still increase from left to right.
    pub fn flipped(&self) -> Sample {
        let (h, w) = (self.height(), self.width());
        let img = self.image.data();
        let image = Tensor::from_fn(&[3, h, w], |i| {
            let (row, col) = (i / w, i % w);
            img[row * w + (w - 1 - col)]
        });
        let lanes = self.exist.len() as u8;
        let remap = |c: u8| if c == 0 { 0 } else { lanes + 1 - c };
        let mut label_mask = vec![0; h * w];
        for r in 0..h {
            for c in 0..w {
                label_mask[r * w + c] = remap(self.label_mask[r * w + (w - 1 - c)]);
            }
        }
        let exist = lane::exist_from_mask(&label_mask, self.exist.len());
        Sample {
            image,
            label_mask,
            exist,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flip_relabels_lanes() {
        let image = Tensor::from_fn(&[3, 1, 4], |i| i as f32);
        let s = Sample::new(image, vec![1, 0, 2, 2], 4).unwrap();
        let f = s.flipped();
        assert_eq!(f.label_mask, vec![3, 3, 0, 4]);
        assert_eq!(f.exist, vec![0, 0, 1, 1]);
        assert_eq!(f.image.data()[..4], [3.0, 2.0, 1.0, 0.0]);
        assert_eq!(f.flipped(), s);
    }

    #[test]
    fn class_above_lane_count_rejected() {
        assert!(Sample::new(Tensor::zeros(&[3, 1, 2]), vec![0, 5], 4).is_err());
    }
}
