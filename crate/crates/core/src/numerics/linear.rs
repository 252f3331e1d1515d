use crate::error::{Error, Result};
use crate::numerics::LayerGrads;
use crate::tensor::{gemm, MatRef, Real, Tensor};

fn check<T: Real>(op: &'static str, input: &Tensor<T>, weights: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let (n, f) = input.dims2(op)?;
    let (fw, g) = weights.dims2(op)?;
    if f != fw {
        return Err(Error::shape(
            op,
            format!("input has {f} features but weights expect {fw}"),
        ));
    }
    Ok((n, f, g))
}

/// `input (N×F) · weights (F×G) + bias (G)`.
pub fn fully_connected_forward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    const OP: &str = "fully_connected_forward";
    let (n, f, g) = check(OP, input, weights)?;
    bias.expect_shape(OP, "bias", &[g])?;
    let mut out = Tensor::zeros(&[n, g]);
    for row in out.data_mut().chunks_mut(g) {
        row.copy_from_slice(bias.data());
    }
    gemm(
        MatRef::rm(input.data(), n, f),
        MatRef::rm(weights.data(), f, g),
        T::one(),
        out.data_mut(),
    );
    Ok(out)
}

/// Gradients with respect to the input, the weights, then the bias.
pub fn fully_connected_backward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    d_output: &Tensor<T>,
) -> Result<LayerGrads<T>> {
    const OP: &str = "fully_connected_backward";
    let (n, f, g) = check(OP, input, weights)?;
    d_output.expect_shape(OP, "d_output", &[n, g])?;
    let mut d_input = Tensor::zeros(&[n, f]);
    gemm(
        MatRef::rm(d_output.data(), n, g),
        MatRef::rm_t(weights.data(), f, g),
        T::zero(),
        d_input.data_mut(),
    );
    let mut d_weights = Tensor::zeros(&[f, g]);
    gemm(
        MatRef::rm_t(input.data(), n, f),
        MatRef::rm(d_output.data(), n, g),
        T::zero(),
        d_weights.data_mut(),
    );
    let mut d_bias = vec![T::zero(); g];
    for row in d_output.data().chunks(g) {
        for (acc, &v) in d_bias.iter_mut().zip(row) {
            *acc += v;
        }
    }
    Ok(LayerGrads {
        d_input,
        d_weights: vec![d_weights, Tensor::from_vec(&[g], d_bias)?],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weights_copy_input() {
        let x = Tensor::<f64>::from_fn(&[2, 3], |i| i as f64 - 2.0);
        let eye = Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        let y = fully_connected_forward(&x, &eye, &Tensor::zeros(&[3])).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn zero_weights_broadcast_bias() {
        let x = Tensor::<f64>::from_fn(&[3, 2], |i| i as f64);
        let b = Tensor::from_vec(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = fully_connected_forward(&x, &Tensor::zeros(&[2, 4]), &b).unwrap();
        for row in y.data().chunks(4) {
            assert_eq!(row, b.data());
        }
    }

    #[test]
    fn feature_mismatch_is_rejected() {
        let x = Tensor::<f32>::zeros(&[1, 5]);
        let err = fully_connected_forward(&x, &Tensor::zeros(&[4, 2]), &Tensor::zeros(&[2])).unwrap_err();
        assert!(err.to_string().contains("5 features"));
    }
}
