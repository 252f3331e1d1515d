use crate::error::{Error, Result};
use crate::numerics::gates;
use crate::tensor::{Real, Tensor};

/// 2×2 max pool with stride 2.
///
/// Returns the pooled tensor and, for every output element, the flat input
/// index of the winning element. Ties go to the first element in row-major
/// window order.
pub fn maxpool2x2_forward<T: Real>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    const OP: &str = "maxpool2x2_forward";
    let (n, c, h, w) = input.dims4(OP)?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(OP, format!("H={h} and W={w} must both be even")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let top = base + 2 * oy * w + 2 * ox;
                let mut best = top;
                for cand in [top + 1, top + w, top + w + 1] {
                    if x[cand] > x[best] {
                        best = cand;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    if gates::active() {
        argmax = gates::indices(argmax);
        out = argmax.iter().map(|&i| x[i]).collect();
    }
    Ok((Tensor::from_vec(&[n, c, oh, ow], out)?, argmax))
}

/// Route each output gradient to its argmax position in a zero input.
pub fn maxpool2x2_backward<T: Real>(indices: &[usize], d_output: &Tensor<T>) -> Result<Tensor<T>> {
    const OP: &str = "maxpool2x2_backward";
    let (n, c, oh, ow) = d_output.dims4(OP)?;
    if indices.len() != d_output.len() {
        return Err(Error::shape(
            OP,
            format!("{} indices for {} output gradients", indices.len(), d_output.len()),
        ));
    }
    let mut d_input = Tensor::zeros(&[n, c, 2 * oh, 2 * ow]);
    let dx = d_input.data_mut();
    for (&i, &g) in indices.iter().zip(d_output.data()) {
        let slot = dx
            .get_mut(i)
            .ok_or_else(|| Error::shape(OP, format!("argmax index {i} outside the input")))?;
        *slot += g;
    }
    Ok(d_input)
}
