use crate::error::{Error, Result};
use crate::numerics::{LayerGrads, Mode};
use crate::tensor::{Real, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// What the backward pass and the running-statistics update need.
#[derive(Clone, Debug)]
pub struct BatchNormCache<T> {
    pub mode: Mode,
    /// Normalized input, before the affine transform.
    pub x_hat: Tensor<T>,
    pub inv_std: Vec<T>,
    /// Batch mean and unbiased batch variance (train mode only).
    pub batch_mean: Vec<T>,
    pub batch_var: Vec<T>,
}

fn check_params<T: Real>(op: &'static str, c: usize, tensors: [(&str, &Tensor<T>); 4]) -> Result<()> {
    for (name, t) in tensors {
        if t.shape() != [c] {
            return Err(Error::shape(
                op,
                format!("{name} has shape {:?} but input has C={c}", t.shape()),
            ));
        }
    }
    Ok(())
}

/// Per-channel normalization over N×H×W followed by `gamma·x̂ + beta`.
pub fn batchnorm2d_forward<T: Real>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    mode: Mode,
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    const OP: &str = "batchnorm2d_forward";
    let (n, c, h, w) = input.dims4(OP)?;
    check_params(
        OP,
        c,
        [("gamma", gamma), ("beta", beta), ("running_mean", running_mean), ("running_var", running_var)],
    )?;
    let plane = h * w;
    let count = (n * plane) as f64;
    let x = input.data();

    let (mean, var, batch_var) = match mode {
        Mode::Train => {
            let mut mean = vec![0.0f64; c];
            let mut var = vec![0.0f64; c];
            for (i, chunk) in x.chunks(plane).enumerate() {
                mean[i % c] += chunk.iter().map(|v| v.as_f64()).sum::<f64>();
            }
            for m in &mut mean {
                *m /= count;
            }
            for (i, chunk) in x.chunks(plane).enumerate() {
                let m = mean[i % c];
                var[i % c] += chunk.iter().map(|v| (v.as_f64() - m).powi(2)).sum::<f64>();
            }
            let unbiased: Vec<f64> = var
                .iter()
                .map(|&s| if count > 1.0 { s / (count - 1.0) } else { s / count })
                .collect();
            for v in &mut var {
                *v /= count;
            }
            (mean, var, unbiased)
        }
        Mode::Infer => (
            running_mean.data().iter().map(|v| v.as_f64()).collect(),
            running_var.data().iter().map(|v| v.as_f64()).collect(),
            Vec::new(),
        ),
    };

    let inv_std: Vec<T> = var
        .iter()
        .map(|&v| T::from_f64_lossy(1.0 / (v + BN_EPS).sqrt()))
        .collect();
    let mean_t: Vec<T> = mean.iter().map(|&m| T::from_f64_lossy(m)).collect();
    let mut x_hat = input.clone();
    let mut out = input.clone();
    for (i, (xh, y)) in x_hat
        .data_mut()
        .chunks_mut(plane)
        .zip(out.data_mut().chunks_mut(plane))
        .enumerate()
    {
        let ch = i % c;
        let (m, s, g, b) = (mean_t[ch], inv_std[ch], gamma.data()[ch], beta.data()[ch]);
        for (xh, y) in xh.iter_mut().zip(y.iter_mut()) {
            *xh = (*xh - m) * s;
            *y = g * *xh + b;
        }
    }
    let batch_mean = if mode == Mode::Train { mean_t } else { Vec::new() };
    Ok((
        out,
        BatchNormCache {
            mode,
            x_hat,
            inv_std,
            batch_mean,
            batch_var: batch_var.into_iter().map(T::from_f64_lossy).collect(),
        },
    ))
}

/// Gradients with respect to the input, gamma, and beta. In train mode the
/// input gradient flows through the batch statistics as well.
pub fn batchnorm2d_backward<T: Real>(
    cache: &BatchNormCache<T>,
    gamma: &Tensor<T>,
    d_output: &Tensor<T>,
) -> Result<LayerGrads<T>> {
    const OP: &str = "batchnorm2d_backward";
    let (n, c, h, w) = d_output.dims4(OP)?;
    cache.x_hat.expect_same_shape(OP, d_output)?;
    gamma.expect_shape(OP, "gamma", &[c])?;
    let plane = h * w;
    let count = (n * plane) as f64;

    let mut sum_dy = vec![0.0f64; c];
    let mut sum_dy_xhat = vec![0.0f64; c];
    for (i, (dy, xh)) in d_output
        .data()
        .chunks(plane)
        .zip(cache.x_hat.data().chunks(plane))
        .enumerate()
    {
        for (&g, &x) in dy.iter().zip(xh) {
            sum_dy[i % c] += g.as_f64();
            sum_dy_xhat[i % c] += g.as_f64() * x.as_f64();
        }
    }

    let mut d_input = d_output.clone();
    for (i, (dx, xh)) in d_input
        .data_mut()
        .chunks_mut(plane)
        .zip(cache.x_hat.data().chunks(plane))
        .enumerate()
    {
        let ch = i % c;
        let scale = gamma.data()[ch] * cache.inv_std[ch];
        match cache.mode {
            Mode::Infer => {
                for g in dx.iter_mut() {
                    *g *= scale;
                }
            }
            Mode::Train => {
                let mean_dy = T::from_f64_lossy(sum_dy[ch] / count);
                let mean_dy_xhat = T::from_f64_lossy(sum_dy_xhat[ch] / count);
                for (g, &x) in dx.iter_mut().zip(xh) {
                    *g = scale * (*g - mean_dy - x * mean_dy_xhat);
                }
            }
        }
    }
    let to_tensor = |v: Vec<f64>| {
        Tensor::from_vec(&[c], v.into_iter().map(T::from_f64_lossy).collect()).expect("channel vector")
    };
    Ok(LayerGrads {
        d_input,
        d_weights: vec![to_tensor(sum_dy_xhat), to_tensor(sum_dy)],
    })
}

/// `running = (1 − momentum)·running + momentum·batch`, using the unbiased
/// batch variance. No-op for caches produced in inference mode.
pub fn update_running_stats<T: Real>(
    running_mean: &mut Tensor<T>,
    running_var: &mut Tensor<T>,
    cache: &BatchNormCache<T>,
    momentum: f64,
) {
    if cache.mode != Mode::Train {
        return;
    }
    let m = T::from_f64_lossy(momentum);
    let keep = T::one() - m;
    for (r, &b) in running_mean.data_mut().iter_mut().zip(&cache.batch_mean) {
        *r = keep * *r + m * b;
    }
    for (r, &b) in running_var.data_mut().iter_mut().zip(&cache.batch_var) {
        *r = keep * *r + m * b;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(c: usize) -> (Tensor<f64>, Tensor<f64>) {
        (Tensor::zeros(&[c]), Tensor::full(&[c], 1.0))
    }

    #[test]
    fn standardized_input_passes_through() {
        // per channel: values ±1 -> mean 0, biased var 1
        let x = Tensor::<f64>::from_vec(&[1, 2, 1, 4], vec![1.0, -1.0, 1.0, -1.0, -1.0, -1.0, 1.0, 1.0]).unwrap();
        let (rm, rv) = stats(2);
        let (y, _) = batchnorm2d_forward(&x, &Tensor::full(&[2], 1.0), &Tensor::zeros(&[2]), &rm, &rv, Mode::Train)
            .unwrap();
        assert!(y.max_abs_diff(&x).unwrap() < 1e-5);
    }

    #[test]
    fn zero_gamma_outputs_beta() {
        let x = Tensor::<f64>::from_fn(&[2, 2, 2, 2], |i| (i * i) as f64);
        let (rm, rv) = stats(2);
        let beta = Tensor::from_vec(&[2], vec![3.0, -0.5]).unwrap();
        let (y, _) = batchnorm2d_forward(&x, &Tensor::zeros(&[2]), &beta, &rm, &rv, Mode::Train).unwrap();
        for (i, chunk) in y.data().chunks(4).enumerate() {
            assert!(chunk.iter().all(|&v| v == beta.data()[i % 2]));
        }
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let x = Tensor::<f32>::zeros(&[1, 3, 2, 2]);
        let p = Tensor::<f32>::zeros(&[2]);
        assert!(batchnorm2d_forward(&x, &p, &p, &p, &p, Mode::Infer).is_err());
    }

    #[test]
    fn running_stats_follow_momentum() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (mut rm, mut rv) = stats(1);
        let one = Tensor::full(&[1], 1.0);
        let (_, cache) = batchnorm2d_forward(&x, &one, &Tensor::zeros(&[1]), &rm, &rv, Mode::Train).unwrap();
        update_running_stats(&mut rm, &mut rv, &cache, BN_MOMENTUM);
        assert!((rm.data()[0] - 0.25).abs() < 1e-12);
        // unbiased variance of 1..4 is 5/3
        assert!((rv.data()[0] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn infer_mode_uses_running_stats() {
        let x = Tensor::<f64>::full(&[1, 1, 2, 2], 3.0);
        let rm = Tensor::full(&[1], 1.0);
        let rv = Tensor::full(&[1], 4.0 - BN_EPS);
        let one = Tensor::full(&[1], 1.0);
        let (y, _) = batchnorm2d_forward(&x, &one, &Tensor::zeros(&[1]), &rm, &rv, Mode::Infer).unwrap();
        assert!(y.data().iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }
}
