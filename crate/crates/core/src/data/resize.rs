//! Corner-aligned resampling: output pixel `i` samples source coordinate
//! `i · (src − 1) / (dst − 1)`, so the first and last rows/columns map
//! onto each other exactly.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn source_coord(i: usize, src: usize, dst: usize) -> f64 {
    if dst <= 1 || src <= 1 {
        0.0
    } else {
        i as f64 * (src - 1) as f64 / (dst - 1) as f64
    }
}

/// Scale factor taking source coordinates to destination coordinates.
pub fn coord_scale(src: usize, dst: usize) -> f64 {
    if src <= 1 || dst <= 1 {
        1.0
    } else {
        (dst - 1) as f64 / (src - 1) as f64
    }
}

/// Bilinear resize of a `C × H × W` tensor.
pub fn resize_bilinear(input: &Tensor<f32>, out_h: usize, out_w: usize) -> Result<Tensor<f32>> {
    let (c, h, w) = match *input.shape() {
        [c, h, w] => (c, h, w),
        _ => return Err(Error::shape("resize_bilinear", format!("expected C×H×W, got {:?}", input.shape()))),
    };
    if out_h == 0 || out_w == 0 {
        return Err(Error::shape("resize_bilinear", "output size must be positive"));
    }
    if (h, w) == (out_h, out_w) {
        return Ok(input.clone());
    }
    let taps = |dst: usize, src: usize| -> Vec<(usize, usize, f32)> {
        (0..dst)
            .map(|i| {
                let s = source_coord(i, src, dst);
                let i0 = (s.floor() as usize).min(src - 1);
                let i1 = (i0 + 1).min(src - 1);
                (i0, i1, (s - i0 as f64) as f32)
            })
            .collect()
    };
    let (rows, cols) = (taps(out_h, h), taps(out_w, w));
    let src = input.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for &(r0, r1, fy) in &rows {
            for &(c0, c1, fx) in &cols {
                let top = plane[r0 * w + c0] * (1.0 - fx) + plane[r0 * w + c1] * fx;
                let bottom = plane[r1 * w + c0] * (1.0 - fx) + plane[r1 * w + c1] * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Tensor::from_vec(&[c, out_h, out_w], out)
}

/// Nearest-neighbour resize of an `h × w` label mask (labels are never blended).
pub fn resize_nearest(mask: &[u8], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<u8> {
    if (h, w) == (out_h, out_w) {
        return mask.to_vec();
    }
    let pick = |i: usize, src: usize, dst: usize| (source_coord(i, src, dst).round() as usize).min(src - 1);
    let cols: Vec<usize> = (0..out_w).map(|c| pick(c, w, out_w)).collect();
    let mut out = Vec::with_capacity(out_h * out_w);
    for r in 0..out_h {
        let sr = pick(r, h, out_h);
        out.extend(cols.iter().map(|&sc| mask[sr * w + sc]));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corners_are_preserved() {
        let t = Tensor::from_fn(&[1, 3, 4], |i| i as f32);
        let r = resize_bilinear(&t, 5, 7).unwrap();
        assert_eq!(r.at(&[0, 0, 0]), 0.0);
        assert_eq!(r.at(&[0, 0, 6]), 3.0);
        assert_eq!(r.at(&[0, 4, 0]), 8.0);
        assert_eq!(r.at(&[0, 4, 6]), 11.0);
    }

    #[test]
    fn linear_ramps_stay_linear() {
        let t = Tensor::from_fn(&[1, 1, 5], |i| 2.0 * i as f32);
        let r = resize_bilinear(&t, 1, 9).unwrap();
        let want: Vec<f32> = (0..9).map(|i| i as f32).collect();
        assert_eq!(r.data(), &want[..]);
    }

    #[test]
    fn nearest_keeps_labels() {
        let m = vec![0, 1, 2, 3];
        assert_eq!(resize_nearest(&m, 2, 2, 3, 3), vec![0, 1, 1, 2, 3, 3, 2, 3, 3]);
    }
}
