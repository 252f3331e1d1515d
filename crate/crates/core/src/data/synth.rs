//! Procedural road scenes with known lane geometry.
//!
//! Lanes are quadratics in `y` that converge towards a vanishing point:
//! with `t ∈ [0, 1]` running from the horizon to the bottom row,
//! `x(t) = vx + (x_bottom − vx)·t + bend·t·(1 − t)`. Lanes share `vx` and
//! `bend`, so they never cross and their left-to-right order at the
//! bottom row holds everywhere.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::culane::Category;
use crate::data::image::{to_u8, Image};
use crate::data::lane::{self, LanePolyline};
use crate::data::Sample;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    /// Label stroke width; `None` scales 16 px at 800 px wide.
    pub stroke_width: Option<f64>,
    /// Share of zero-lane crossroad scenes.
    pub crossroad_fraction: f64,
    /// Dark patches over road and paint simulating shadows and occlusion.
    pub distractors: bool,
}

impl SynthConfig {
    pub fn new(height: usize, width: usize) -> Self {
        SynthConfig {
            height,
            width,
            stroke_width: None,
            crossroad_fraction: 0.0,
            distractors: true,
        }
    }

    pub fn stroke(&self) -> f64 {
        self.stroke_width.unwrap_or_else(|| lane::default_stroke_width(self.width))
    }

    fn validate(&self, count: usize) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.height % 8 != 0 || self.width % 8 != 0 {
            return Err(Error::Config(format!(
                "synthetic size {}x{} must be positive multiples of 8",
                self.height, self.width
            )));
        }
        if count == 0 {
            return Err(Error::Config("scene count must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.crossroad_fraction) {
            return Err(Error::Config(format!(
                "crossroad fraction {} outside [0, 1]",
                self.crossroad_fraction
            )));
        }
        if self.stroke_width.is_some_and(|s| !(s >= 1.0)) {
            return Err(Error::Config("stroke width must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub sample: Sample,
    /// The planted lanes ordered left to right.
    pub lanes: Vec<LanePolyline>,
    /// Class id of each lane: its slot among the four lane positions
    /// (1 = far left … 4 = far right), as in CULane masks.
    pub classes: Vec<u8>,
    /// The 8-bit image behind `sample.image`.
    pub image: Image,
    pub category: Category,
}

pub const MAX_LANES: usize = 4;

/// `count` scenes at `h × w` with default settings.
pub fn generate_synthetic(seed: u64, count: usize, h: usize, w: usize) -> Result<Vec<SyntheticScene>> {
    generate_with(&SynthConfig::new(h, w), seed, count)
}

/// Scene `i` depends only on `(seed, i)`, so prefixes of larger sets agree.
pub fn generate_with(config: &SynthConfig, seed: u64, count: usize) -> Result<Vec<SyntheticScene>> {
    config.validate(count)?;
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            scene(config, &mut rng)
        })
        .collect()
}

fn scene(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<SyntheticScene> {
    let (h, w) = (cfg.height, cfg.width);
    let (hf, wf) = (h as f64, w as f64);
    let crossroad = rng.random::<f64>() < cfg.crossroad_fraction;
    let vy = hf * rng.random_range(0.30..0.40);
    let vx = wf * rng.random_range(0.42..0.58);
    let bend = wf * rng.random_range(-0.12..0.12);
    let bottom = hf - 1.0;

    let mut lanes = Vec::new();
    let mut classes = Vec::new();
    let mut paints = Vec::new();
    if !crossroad {
        let n = rng.random_range(2..=MAX_LANES);
        let mut slots = [0usize, 1, 2, 3];
        // partial Fisher-Yates: the first n entries are a uniform subset
        for k in 0..n {
            let j = rng.random_range(k..4);
            slots.swap(k, j);
        }
        let mut chosen = slots[..n].to_vec();
        chosen.sort_unstable();
        for slot in chosen {
            let xb = wf * ([0.08, 0.36, 0.64, 0.92][slot] + rng.random_range(-0.03..0.03));
            let t_top = rng.random_range(0.12..0.20);
            let points = (0..12)
                .map(|k| {
                    let t = t_top + (1.0 - t_top) * k as f64 / 11.0;
                    (vx + (xb - vx) * t + bend * t * (1.0 - t), vy + t * (bottom - vy))
                })
                .collect();
            lanes.push(LanePolyline::new(points)?);
            classes.push(slot as u8 + 1);
            paints.push(Paint {
                color: if rng.random::<f64>() < 0.25 {
                    [0.95, 0.82, 0.25]
                } else {
                    [0.95, 0.95, 0.95]
                },
                dashed: rng.random::<f64>() < 0.3,
                phase: rng.random::<f64>(),
            });
        }
    }

    let stroke = cfg.stroke();
    let label_mask = lane::rasterize_classes(&lanes, &classes, h, w, stroke);

    // background: sky gradient above the horizon, textured asphalt below
    let road = rng.random_range(0.25..0.40);
    let noise = Normal::new(0.0, 0.03).expect("valid sigma");
    let (fx, fy, ph) = (rng.random_range(0.02..0.08), rng.random_range(0.05..0.15), rng.random::<f64>() * 6.28);
    let mut rgb = vec![[0.0f64; 3]; h * w];
    for r in 0..h {
        for c in 0..w {
            let px = &mut rgb[r * w + c];
            if (r as f64) < vy {
                let g = r as f64 / vy;
                *px = [0.55 + 0.1 * g, 0.65 + 0.05 * g, 0.85 - 0.1 * g];
            } else {
                let tex = 0.04 * ((c as f64 * fx + ph).sin() * (r as f64 * fy).cos());
                let v = road + tex;
                *px = [v, v, v * 1.02];
            }
        }
    }

    // paint: slightly narrower than the label stroke; dashes run along y
    let paint_width = (stroke * 0.8).max(2.0);
    for ((lane, paint), class) in lanes.iter().zip(&paints).zip(classes.iter().copied()) {
        let pts = lane.points();
        let (y0, y1) = (pts[0].1, pts[pts.len() - 1].1);
        for r in 0..h {
            for c in 0..w {
                if label_mask[r * w + c] != class {
                    continue;
                }
                if lane::distance_to_polyline(c as f64, r as f64, pts) > paint_width / 2.0 {
                    continue;
                }
                if paint.dashed {
                    let t = ((r as f64 - y0) / (y1 - y0) * 6.0 + paint.phase).fract();
                    if t > 0.7 {
                        continue;
                    }
                }
                rgb[r * w + c] = paint.color;
            }
        }
    }

    if crossroad {
        // zebra bars across the lower road
        let bars = rng.random_range(3..7);
        let row0 = (vy + (bottom - vy) * 0.6) as usize;
        let row1 = (row0 + (h / 10).max(2)).min(h);
        for b in 0..bars {
            let c0 = w * (2 * b + 1) / (2 * bars + 1);
            let c1 = (c0 + w / (2 * bars + 1)).min(w);
            for r in row0..row1 {
                for c in c0..c1 {
                    rgb[r * w + c] = [0.9, 0.9, 0.9];
                }
            }
        }
    }

    if cfg.distractors && rng.random::<f64>() < 0.5 {
        for _ in 0..rng.random_range(1..=3) {
            let ph = rng.random_range(h / 10..=h / 4);
            let pw = rng.random_range(w / 12..=w / 5);
            let r0 = rng.random_range(vy as usize..h - ph.min(h - vy as usize));
            let c0 = rng.random_range(0..w - pw);
            let shade = rng.random_range(0.45..0.75);
            for r in r0..(r0 + ph).min(h) {
                for c in c0..c0 + pw {
                    for v in &mut rgb[r * w + c] {
                        *v *= shade;
                    }
                }
            }
        }
    }

    let mut image = Image::new(w, h, 3);
    for (k, px) in rgb.iter().enumerate() {
        for ch in 0..3 {
            image.data[k * 3 + ch] = to_u8((px[ch] + noise.sample(rng)) as f32);
        }
    }
    let sample = Sample::new(image.to_tensor(), label_mask, MAX_LANES)?;
    Ok(SyntheticScene {
        sample,
        lanes,
        classes,
        image,
        category: if crossroad { Category::Crossroad } else { Category::Normal },
    })
}

struct Paint {
    color: [f64; 3],
    dashed: bool,
    phase: f64,
}
