//! Lane polylines, their text format, and distance-based rasterization.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// One lane as image-space points with strictly monotonic `y`.
#[derive(Clone, Debug, PartialEq)]
pub struct LanePolyline {
    points: Vec<(f64, f64)>,
}

impl LanePolyline {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Label(format!("a lane needs at least 2 points, got {}", points.len())));
        }
        if points.iter().any(|&(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::Label("lane point is not finite".into()));
        }
        let inc = points.windows(2).all(|p| p[1].1 > p[0].1);
        let dec = points.windows(2).all(|p| p[1].1 < p[0].1);
        if !inc && !dec {
            return Err(Error::Label("lane points must be strictly monotonic in y".into()));
        }
        Ok(LanePolyline { points })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    /// The point with the largest `y` (closest to the camera).
    pub fn bottom(&self) -> (f64, f64) {
        let (a, b) = (self.points[0], self.points[self.points.len() - 1]);
        if a.1 > b.1 {
            a
        } else {
            b
        }
    }

    /// Points reordered by increasing `y`.
    pub fn top_down(&self) -> Self {
        let mut points = self.points.clone();
        if points[0].1 > points[points.len() - 1].1 {
            points.reverse();
        }
        LanePolyline { points }
    }

    pub fn scaled(&self, sx: f64, sy: f64) -> Self {
        LanePolyline {
            points: self.points.iter().map(|&(x, y)| (x * sx, y * sy)).collect(),
        }
    }

    /// Horizontal position at height `y` by linear interpolation, or `None`
    /// outside the lane's vertical extent.
    pub fn x_at(&self, y: f64) -> Option<f64> {
        let lane = self.top_down();
        lane.points.windows(2).find_map(|s| {
            let ((x0, y0), (x1, y1)) = (s[0], s[1]);
            (y0 <= y && y <= y1).then(|| x0 + (x1 - x0) * (y - y0) / (y1 - y0))
        })
    }
}

/// Parses a `.lines.txt` document: one lane per line, alternating `x y`
/// values. Blank lines are ignored.
pub fn parse_lines(text: &str, context: &str) -> Result<Vec<LanePolyline>> {
    let mut lanes = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let at = || format!("{context}:{}", i + 1);
        let values = line
            .split_whitespace()
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::format(at(), format!("bad coordinate: {e}")))?;
        if values.len() % 2 != 0 {
            return Err(Error::format(at(), "odd number of coordinates"));
        }
        let points = values.chunks_exact(2).map(|p| (p[0], p[1])).collect();
        lanes.push(LanePolyline::new(points).map_err(|e| Error::format(at(), e.to_string()))?);
    }
    Ok(lanes)
}

/// Inverse of [`parse_lines`]; coordinates printed with at most 3 decimals.
pub fn format_lines(lanes: &[LanePolyline]) -> String {
    let mut out = String::new();
    for lane in lanes {
        let mut first = true;
        for &(x, y) in lane.points() {
            for v in [x, y] {
                if !first {
                    out.push(' ');
                }
                first = false;
                let _ = write!(out, "{}", trim_float(v));
            }
        }
        out.push('\n');
    }
    out
}

fn trim_float(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

/// Euclidean distance from `(px, py)` to segment `a → b`.
pub fn segment_distance(px: f64, py: f64, (ax, ay): (f64, f64), (bx, by): (f64, f64)) -> f64 {
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((px - ax) * dx + (py - ay) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (ax + t * dx, ay + t * dy);
    ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
}

pub fn distance_to_polyline(px: f64, py: f64, points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|s| segment_distance(px, py, s[0], s[1]))
        .fold(f64::INFINITY, f64::min)
}

/// Visits every pixel `(row, col)` whose center (integer coordinates) lies
/// within `radius` of some segment, passing that segment's distance. A pixel
/// near several segments is visited once per segment.
fn for_each_covered(points: &[(f64, f64)], h: usize, w: usize, radius: f64, mut f: impl FnMut(usize, usize, f64)) {
    for s in points.windows(2) {
        let (a, b) = (s[0], s[1]);
        let c0 = (a.0.min(b.0) - radius).floor() - 1.0;
        let c1 = (a.0.max(b.0) + radius).ceil() + 1.0;
        let r0 = (a.1.min(b.1) - radius).floor() - 1.0;
        let r1 = (a.1.max(b.1) + radius).ceil() + 1.0;
        if c1 < 0.0 || r1 < 0.0 || c0 >= w as f64 || r0 >= h as f64 {
            continue;
        }
        let (c0, c1) = (c0.max(0.0) as usize, (c1 as usize).min(w - 1));
        let (r0, r1) = (r0.max(0.0) as usize, (r1 as usize).min(h - 1));
        for r in r0..=r1 {
            for c in c0..=c1 {
                let d = segment_distance(c as f64, r as f64, a, b);
                if d <= radius {
                    f(r, c, d);
                }
            }
        }
    }
}

/// Binary `h × w` mask of every pixel within `width / 2` of the polyline.
pub fn render_polyline(points: &[(f64, f64)], h: usize, w: usize, width: f64) -> Vec<bool> {
    let mut mask = vec![false; h * w];
    if h > 0 && w > 0 {
        for_each_covered(points, h, w, width / 2.0, |r, c, _| mask[r * w + c] = true);
    }
    mask
}

/// Orders lanes left to right by `x` at their lowest point, keeping at most
/// `max_lanes`; surplus lanes farthest from the horizontal centre go first.
pub fn order_lanes(mut lanes: Vec<LanePolyline>, width: usize, max_lanes: usize) -> Vec<LanePolyline> {
    let centre = (width as f64 - 1.0) / 2.0;
    if lanes.len() > max_lanes {
        lanes.sort_by(|a, b| (a.bottom().0 - centre).abs().total_cmp(&(b.bottom().0 - centre).abs()));
        lanes.truncate(max_lanes);
    }
    lanes.sort_by(|a, b| a.bottom().0.total_cmp(&b.bottom().0));
    lanes
}

/// Class-id mask: lane `i` of `lanes` paints class `i + 1` with stroke
/// `width`; where strokes overlap the nearest lane wins (lower id on ties).
pub fn rasterize_lanes(lanes: &[LanePolyline], h: usize, w: usize, width: f64) -> Vec<u8> {
    let classes: Vec<u8> = (1..=lanes.len()).map(|i| u8::try_from(i).expect("at most 255 lanes")).collect();
    rasterize_classes(lanes, &classes, h, w, width)
}

/// [`rasterize_lanes`] with an explicit class id per lane.
pub fn rasterize_classes(lanes: &[LanePolyline], classes: &[u8], h: usize, w: usize, width: f64) -> Vec<u8> {
    assert_eq!(lanes.len(), classes.len(), "one class per lane");
    let mut mask = vec![0u8; h * w];
    let mut best = vec![f64::INFINITY; h * w];
    if h == 0 || w == 0 {
        return mask;
    }
    for (lane, &class) in lanes.iter().zip(classes) {
        for_each_covered(lane.points(), h, w, width / 2.0, |r, c, d| {
            let k = r * w + c;
            if d < best[k] {
                best[k] = d;
                mask[k] = class;
            }
        });
    }
    mask
}

/// Existence flags for `lanes` classes: `flags[i] == 1` iff class `i + 1`
/// occurs in the mask.
pub fn exist_from_mask(mask: &[u8], lanes: usize) -> Vec<u8> {
    let mut flags = vec![0u8; lanes];
    for &m in mask {
        if (1..=lanes).contains(&(m as usize)) {
            flags[m as usize - 1] = 1;
        }
    }
    flags
}

/// Stroke width used for training labels: 16 px at 800 px wide, scaled,
/// never below 3.
pub fn default_stroke_width(image_width: usize) -> f64 {
    (16.0 * image_width as f64 / 800.0).round().max(3.0)
}
