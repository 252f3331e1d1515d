use serde::{Deserialize, Serialize};

use crate::blocks::exchange::{parse_layout, Stage, DEFAULT_LAYOUT};
use crate::error::{Error, Result};

/// Architecture hyper-parameters. Everything that changes a parameter shape
/// lives here, so a config plus a seed fully determines the initial weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_h: usize,
    pub input_w: usize,
    pub num_lanes: usize,
    pub num_classes: usize,
    /// Channel depth after each of the three downsamplers.
    pub stage_channels: [usize; 3],
    pub spatial_kernel_width: usize,
    pub seed: u64,
    /// Non-bottleneck-1D blocks between the second downsampler and the first merge.
    pub stage2_blocks: usize,
    /// Stage order of the information-exchange block, e.g. `d1,d2,down,up,d1,d4`.
    pub exchange_layout: String,
    pub exist_hidden: usize,
    /// Dropout rate inside encoder residual blocks; 0 disables it.
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::new(288, 800)
    }
}

impl ModelConfig {
    pub fn new(input_h: usize, input_w: usize) -> Self {
        ModelConfig {
            input_h,
            input_w,
            num_lanes: 4,
            num_classes: 5,
            stage_channels: [16, 64, 128],
            spatial_kernel_width: 9,
            seed: 0,
            stage2_blocks: 5,
            exchange_layout: layout_string(&DEFAULT_LAYOUT),
            exist_hidden: 64,
            dropout: 0.0,
        }
    }

    /// The 16×24, (4, 8, 16)-channel network used by the gradient checks.
    pub fn miniature() -> Self {
        ModelConfig {
            stage_channels: [4, 8, 16],
            ..Self::new(16, 24)
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_input(mut self, h: usize, w: usize) -> Self {
        self.input_h = h;
        self.input_w = w;
        self
    }

    pub fn layout(&self) -> Result<Vec<Stage>> {
        parse_layout(&self.exchange_layout)
    }

    pub fn exist_channels(&self) -> usize {
        (self.stage_channels[2] / 4).max(1)
    }

    pub fn encoder_shape(&self) -> (usize, usize, usize) {
        (self.stage_channels[2], self.input_h / 8, self.input_w / 8)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.input_h == 0 || self.input_w == 0 || self.input_h % 8 != 0 || self.input_w % 8 != 0 {
            return bad(format!(
                "input size {}x{} must be positive multiples of 8",
                self.input_h, self.input_w
            ));
        }
        if self.num_lanes == 0 || self.num_classes != self.num_lanes + 1 {
            return bad(format!(
                "num_classes ({}) must equal num_lanes ({}) + 1",
                self.num_classes, self.num_lanes
            ));
        }
        let [c1, c2, c3] = self.stage_channels;
        if !(3 < c1 && c1 < c2 && c2 < c3) {
            return bad(format!(
                "stage channels {:?} must strictly increase from the 3 input channels",
                self.stage_channels
            ));
        }
        if self.spatial_kernel_width % 2 == 0 {
            return bad(format!("spatial kernel width {} must be odd", self.spatial_kernel_width));
        }
        if self.exist_hidden == 0 {
            return bad("exist_hidden must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout rate {} outside [0, 1)", self.dropout));
        }
        self.layout()?;
        Ok(())
    }
}

pub fn layout_string(layout: &[Stage]) -> String {
    layout.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(",")
}
