//! Brute-force reference implementations. Plain slices and loops only, so
//! they stay independent of the optimized code paths they check.
#![allow(dead_code, clippy::too_many_arguments)]

/// Direct convolution: the seven nested loops, no lowering.
pub fn naive_conv2d(
    x: &[f64],
    [n, c, h, w]: [usize; 4],
    k: &[f64],
    [o, ci, kh, kw]: [usize; 4],
    bias: Option<&[f64]>,
    (sh, sw): (usize, usize),
    (ph, pw): (usize, usize),
    (dh, dw): (usize, usize),
) -> (Vec<f64>, [usize; 4]) {
    assert_eq!(c, ci);
    let oh = (h + 2 * ph - dh * (kh - 1) - 1) / sh + 1;
    let ow = (w + 2 * pw - dw * (kw - 1) - 1) / sw + 1;
    let mut out = vec![0.0; n * o * oh * ow];
    for b in 0..n {
        for oc in 0..o {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias.map_or(0.0, |bs| bs[oc]);
                    for ic in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * sh + ky * dh) as isize - ph as isize;
                                let ix = (ox * sw + kx * dw) as isize - pw as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xv = x[((b * c + ic) * h + iy as usize) * w + ix as usize];
                                let kv = k[((oc * c + ic) * kh + ky) * kw + kx];
                                acc += xv * kv;
                            }
                        }
                    }
                    out[((b * o + oc) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    (out, [n, o, oh, ow])
}

/// Zero-inflate a kernel: taps spaced `d` apart become a dense kernel of
/// size `d·(k−1)+1` with zeros in the holes.
pub fn inflate_kernel(
    k: &[f64],
    [o, c, kh, kw]: [usize; 4],
    (dh, dw): (usize, usize),
) -> (Vec<f64>, [usize; 4]) {
    let (eh, ew) = (dh * (kh - 1) + 1, dw * (kw - 1) + 1);
    let mut out = vec![0.0; o * c * eh * ew];
    for a in 0..o {
        for b in 0..c {
            for y in 0..kh {
                for x in 0..kw {
                    out[((a * c + b) * eh + y * dh) * ew + x * dw] = k[((a * c + b) * kh + y) * kw + x];
                }
            }
        }
    }
    (out, [o, c, eh, ew])
}

/// The vertical spatial recurrence written out literally, 1-based like the
/// formula: row 1 is copied, every later row adds
/// `relu(Σ_m Σ_n x'[m, j−1, k+n−⌈w/2⌉] · K[m, i, n])` using the already
/// updated previous row. `up` runs the same recurrence from the bottom.
pub fn naive_spatial(
    x: &[f64],
    [n, c, h, w]: [usize; 4],
    kernel: &[f64],
    width: usize,
    up: bool,
) -> Vec<f64> {
    let at = |b: usize, ch: usize, row: usize, col: usize| ((b * c + ch) * h + (row - 1)) * w + (col - 1);
    let half = width.div_ceil(2) as isize;
    let mut out = x.to_vec();
    for b in 0..n {
        let rows: Vec<usize> = if up { (1..h).rev().collect() } else { (2..=h).collect() };
        for j in rows {
            let prev = if up { j + 1 } else { j - 1 };
            for i in 0..c {
                for k in 1..=w {
                    let mut s = 0.0;
                    for m in 0..c {
                        for nn in 1..=width {
                            let col = k as isize + nn as isize - half;
                            if col < 1 || col > w as isize {
                                continue;
                            }
                            s += out[at(b, m, prev, col as usize)] * kernel[(m * c + i) * width + (nn - 1)];
                        }
                    }
                    let idx = at(b, i, j, k);
                    out[idx] = s.max(0.0) + x[idx];
                }
            }
        }
    }
    out
}

/// 2×2 max pool by scanning every window in row-major order.
pub fn naive_maxpool(x: &[f64], [n, c, h, w]: [usize; 4]) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * c * h * w / 4);
    for plane in x.chunks(h * w) {
        for y in (0..h).step_by(2) {
            for xx in (0..w).step_by(2) {
                let window = [
                    plane[y * w + xx],
                    plane[y * w + xx + 1],
                    plane[(y + 1) * w + xx],
                    plane[(y + 1) * w + xx + 1],
                ];
                out.push(window.iter().copied().fold(f64::NEG_INFINITY, f64::max));
            }
        }
    }
    out
}

/// Euclidean distance from a point to the union of a polyline's segments.
pub fn distance_to_polyline(px: f64, py: f64, points: &[(f64, f64)]) -> f64 {
    let mut best = f64::INFINITY;
    for seg in points.windows(2) {
        let (ax, ay) = seg[0];
        let (bx, by) = seg[1];
        let (dx, dy) = (bx - ax, by - ay);
        let len2 = dx * dx + dy * dy;
        let t = if len2 == 0.0 {
            0.0
        } else {
            (((px - ax) * dx + (py - ay) * dy) / len2).clamp(0.0, 1.0)
        };
        let (cx, cy) = (ax + t * dx, ay + t * dy);
        best = best.min(((px - cx).powi(2) + (py - cy).powi(2)).sqrt());
    }
    best
}

/// Every pixel whose center lies within `width / 2` of the polyline.
pub fn brute_force_render(points: &[(f64, f64)], h: usize, w: usize, width: f64) -> Vec<bool> {
    let mut out = vec![false; h * w];
    for r in 0..h {
        for c in 0..w {
            out[r * w + c] = distance_to_polyline(c as f64, r as f64, points) <= width / 2.0;
        }
    }
    out
}

/// Best number of IOU-qualifying pairs over every injective assignment of
/// predictions to ground truths, found by trying all permutations.
pub fn brute_force_matches(iou: &[Vec<f64>], threshold: f64) -> usize {
    let preds = iou.len();
    let gts = iou.first().map_or(0, Vec::len);
    // pad to a square so permutations cover partial assignments
    let size = preds.max(gts);
    let mut perm: Vec<usize> = (0..size).collect();
    let mut best = 0;
    loop {
        let count = (0..preds)
            .filter(|&p| perm[p] < gts && iou[p][perm[p]] >= threshold)
            .count();
        best = best.max(count);
        if !next_permutation(&mut perm) {
            return best;
        }
    }
}

fn next_permutation(v: &mut [usize]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let mut i = v.len() - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = v.len() - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

/// `x` of the polyline at height `y` by linear interpolation between the
/// bracketing points, `None` outside its vertical extent.
pub fn x_at(points: &[(f64, f64)], y: f64) -> Option<f64> {
    points.windows(2).find_map(|s| {
        let ((x0, y0), (x1, y1)) = (s[0], s[1]);
        let (lo, hi) = (y0.min(y1), y0.max(y1));
        if y < lo || y > hi {
            return None;
        }
        Some(if hi == lo { x0 } else { x0 + (x1 - x0) * (y - y0) / (y1 - y0) })
    })
}

/// Mean horizontal distance from each recovered point to the source lane,
/// over the recovered points inside the source's vertical extent. `None`
/// when no point falls inside it.
pub fn mean_horizontal_deviation(recovered: &[(f64, f64)], source: &[(f64, f64)]) -> Option<f64> {
    let diffs: Vec<f64> = recovered
        .iter()
        .filter_map(|&(x, y)| x_at(source, y).map(|sx| (x - sx).abs()))
        .collect();
    (!diffs.is_empty()).then(|| diffs.iter().sum::<f64>() / diffs.len() as f64)
}
