use crate::error::Result;
use crate::numerics::gates;
use crate::tensor::{Real, Tensor};

pub fn relu_forward<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>> {
    input.check_finite("relu_forward")?;
    if !gates::active() {
        return Ok(input.map(|v| v.max(T::zero())));
    }
    let open = gates::bits(input.data().iter().map(|&v| v > T::zero()).collect());
    let data = input.data().iter().zip(open).map(|(&v, o)| if o { v } else { T::zero() }).collect();
    Tensor::from_vec(input.shape(), data)
}

/// Subgradient 0 at 0. `input` is the pre-activation.
pub fn relu_backward<T: Real>(input: &Tensor<T>, d_output: &Tensor<T>) -> Result<Tensor<T>> {
    input.zip_map(d_output, |x, g| if x > T::zero() { g } else { T::zero() })
}

/// Logistic function evaluated without overflow for large `|x|`.
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid_forward<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>> {
    input.check_finite("sigmoid_forward")?;
    Ok(input.map(sigmoid))
}

/// `output` is the sigmoid output.
pub fn sigmoid_backward<T: Real>(output: &Tensor<T>, d_output: &Tensor<T>) -> Result<Tensor<T>> {
    output.zip_map(d_output, |s, g| g * s * (T::one() - s))
}

/// Softmax over the channel axis of an NCHW tensor, independently per pixel.
pub fn channel_softmax_forward<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, c, h, w) = input.dims4("channel_softmax_forward")?;
    input.check_finite("channel_softmax_forward")?;
    let plane = h * w;
    let mut out = input.clone();
    for item in out.data_mut().chunks_mut(c * plane) {
        for p in 0..plane {
            let mut max = item[p];
            for ch in 1..c {
                max = max.max(item[ch * plane + p]);
            }
            let mut total = T::zero();
            for ch in 0..c {
                let e = (item[ch * plane + p] - max).exp();
                item[ch * plane + p] = e;
                total += e;
            }
            for ch in 0..c {
                item[ch * plane + p] /= total;
            }
        }
    }
    Ok(out)
}

/// `output` is the softmax output: `dx = s ⊙ (dy − Σ_c s·dy)`.
pub fn channel_softmax_backward<T: Real>(output: &Tensor<T>, d_output: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, c, h, w) = output.dims4("channel_softmax_backward")?;
    output.expect_same_shape("channel_softmax_backward", d_output)?;
    let plane = h * w;
    let mut d_input = d_output.clone();
    for (s, g) in output.data().chunks(c * plane).zip(d_input.data_mut().chunks_mut(c * plane)) {
        for p in 0..plane {
            let mut inner = T::zero();
            for ch in 0..c {
                inner += s[ch * plane + p] * g[ch * plane + p];
            }
            for ch in 0..c {
                g[ch * plane + p] = s[ch * plane + p] * (g[ch * plane + p] - inner);
            }
        }
    }
    Ok(d_input)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_values() {
        let x = Tensor::<f64>::from_vec(&[3], vec![-3.0, 0.0, 5.0]).unwrap();
        assert_eq!(relu_forward(&x).unwrap().data(), &[0.0, 0.0, 5.0]);
        let g = Tensor::full(&[3], 1.0);
        assert_eq!(relu_backward(&x, &g).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let x = Tensor::<f32>::from_vec(&[2], vec![1.0, f32::NAN]).unwrap();
        assert!(relu_forward(&x).is_err());
        assert!(sigmoid_forward(&x).is_err());
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert_eq!(sigmoid(-1000.0f64), 0.0);
        assert_eq!(sigmoid(1000.0f64), 1.0);
        assert!(sigmoid(-80.0f32) > 0.0);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let x = Tensor::<f64>::full(&[1, 5, 2, 3], 7.5);
        let s = channel_softmax_forward(&x).unwrap();
        assert!(s.data().iter().all(|&v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let x = Tensor::<f64>::from_fn(&[1, 3, 1, 2], |i| i as f64 * 0.7);
        let shifted = x.map(|v| v + 1000.0);
        let a = channel_softmax_forward(&x).unwrap();
        let b = channel_softmax_forward(&shifted).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() < 1e-12);
    }
}
