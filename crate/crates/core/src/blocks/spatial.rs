//! Vertical spatial convolution: a row-sequential message-passing recurrence.
//!
//! Processing rows top to bottom (`Down`), every row after the first becomes
//!
//! ```text
//! x'[i, j, k] = relu( Σ_m Σ_n x'[m, j−1, k + n − c] · K[m, i, n] ) + x[i, j, k]
//! ```
//!
//! where `c = (w − 1) / 2` centres the `w` horizontal taps and out-of-range
//! columns read as zero. The first row is copied unchanged. `Up` runs the
//! same recurrence from the bottom row upwards. Each row consumes the
//! *updated* previous row, so information can travel the full height of the
//! feature map in one pass.
//!
//! The kernel is stored as `C × C × w`, indexed `[source channel m,
//! destination channel i, tap n]`.

use crate::error::{Error, Result};
use crate::numerics::{gates, LayerGrads};
use crate::params::{Gradients, ModelParams, ParamBuilder, ParamId};
use crate::tensor::{gemm, MatRef, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Down,
    Up,
}

/// Kernel and direction of one spatial pass.
#[derive(Clone, Debug)]
pub struct SpatialConvParams<T> {
    pub kernel: Tensor<T>,
    pub direction: Direction,
}

/// Pre-activations of every updated row; the input of `relu` in the formula.
#[derive(Clone, Debug)]
pub struct SpatialCache<T> {
    pub output: Tensor<T>,
    pre: Tensor<T>,
}

struct Geometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    taps: usize,
}

impl Geometry {
    fn check<T: Real>(op: &'static str, input: &Tensor<T>, kernel: &Tensor<T>) -> Result<Self> {
        let (n, c, h, w) = input.dims4(op)?;
        let [km, ki, taps] = *kernel.shape() else {
            return Err(Error::shape(op, format!("kernel must be C×C×w, got {:?}", kernel.shape())));
        };
        if km != ki {
            return Err(Error::shape(op, format!("kernel channel dims differ: {km} vs {ki}")));
        }
        if km != c {
            return Err(Error::shape(op, format!("kernel has {km} channels but input has {c}")));
        }
        if taps % 2 == 0 {
            return Err(Error::shape(op, format!("kernel width {taps} must be odd")));
        }
        Ok(Geometry { n, c, h, w, taps })
    }

    /// `(row, previous row)` pairs in processing order.
    fn schedule(&self, direction: Direction) -> Vec<(usize, usize)> {
        match direction {
            Direction::Down => (1..self.h).map(|j| (j, j - 1)).collect(),
            Direction::Up => (0..self.h.saturating_sub(1)).rev().map(|j| (j, j + 1)).collect(),
        }
    }

    /// Horizontal im2col of one row across all channels: `(C·w) × W`.
    fn row_cols<T: Real>(&self, item: &[T], row: usize, cols: &mut [T]) {
        let half = (self.taps / 2) as isize;
        let (h, w) = (self.h, self.w);
        for m in 0..self.c {
            let src = &item[(m * h + row) * w..(m * h + row + 1) * w];
            for t in 0..self.taps {
                let dst = &mut cols[(m * self.taps + t) * w..(m * self.taps + t + 1) * w];
                for (k, v) in dst.iter_mut().enumerate() {
                    let col = k as isize + t as isize - half;
                    *v = if col >= 0 && (col as usize) < w {
                        src[col as usize]
                    } else {
                        T::zero()
                    };
                }
            }
        }
    }

    /// Adjoint of [`Self::row_cols`]: scatter-add into a row of `item`.
    fn row_cols_adjoint<T: Real>(&self, cols: &[T], row: usize, item: &mut [T]) {
        let half = (self.taps / 2) as isize;
        let (h, w) = (self.h, self.w);
        for m in 0..self.c {
            let dst = &mut item[(m * h + row) * w..(m * h + row + 1) * w];
            for t in 0..self.taps {
                let src = &cols[(m * self.taps + t) * w..(m * self.taps + t + 1) * w];
                for (k, &v) in src.iter().enumerate() {
                    let col = k as isize + t as isize - half;
                    if col >= 0 && (col as usize) < w {
                        dst[col as usize] += v;
                    }
                }
            }
        }
    }
}

/// Kernel rearranged as a `C_dest × (C_src·w)` row-major matrix.
fn kernel_matrix<T: Real>(kernel: &Tensor<T>, c: usize, taps: usize) -> Vec<T> {
    let k = kernel.data();
    let mut out = vec![T::zero(); c * c * taps];
    for m in 0..c {
        for i in 0..c {
            for t in 0..taps {
                out[i * c * taps + m * taps + t] = k[(m * c + i) * taps + t];
            }
        }
    }
    out
}

pub fn spatial_conv_vertical<T: Real>(input: &Tensor<T>, params: &SpatialConvParams<T>) -> Result<Tensor<T>> {
    spatial_forward(input, &params.kernel, params.direction).map(|c| c.output)
}

/// Forward pass keeping the pre-activations for [`spatial_backward`].
pub fn spatial_forward<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    direction: Direction,
) -> Result<SpatialCache<T>> {
    let geo = Geometry::check("spatial_conv_vertical", input, kernel)?;
    let (c, h, w, taps) = (geo.c, geo.h, geo.w, geo.taps);
    let kmat = kernel_matrix(kernel, c, taps);
    let mut output = input.clone();
    let mut pre = Tensor::zeros(input.shape());
    let mut cols = vec![T::zero(); c * taps * w];
    let mut z = vec![T::zero(); c * w];
    let schedule = geo.schedule(direction);
    let item_len = c * h * w;
    for (item, pre_item) in output
        .data_mut()
        .chunks_mut(item_len)
        .zip(pre.data_mut().chunks_mut(item_len))
    {
        for &(row, prev) in &schedule {
            geo.row_cols(item, prev, &mut cols);
            gemm(MatRef::rm(&kmat, c, c * taps), MatRef::rm(&cols, c * taps, w), T::zero(), &mut z);
            let open = gates::active().then(|| gates::bits(z.iter().map(|&v| v > T::zero()).collect()));
            for i in 0..c {
                let base = (i * h + row) * w;
                for k in 0..w {
                    let v = z[i * w + k];
                    pre_item[base + k] = v;
                    item[base + k] += match &open {
                        Some(o) if !o[i * w + k] => T::zero(),
                        Some(_) => v,
                        None => v.max(T::zero()),
                    };
                }
            }
        }
    }
    debug_assert_eq!(geo.n * item_len, output.len());
    Ok(SpatialCache { output, pre })
}

/// Gradients with respect to the input and the kernel. The adjoint
/// recurrence visits rows in reverse processing order, so each row's
/// gradient is complete before it is pushed into the previous row.
pub fn spatial_backward<T: Real>(
    cache: &SpatialCache<T>,
    kernel: &Tensor<T>,
    direction: Direction,
    d_output: &Tensor<T>,
) -> Result<LayerGrads<T>> {
    const OP: &str = "spatial_conv_vertical_backward";
    let geo = Geometry::check(OP, &cache.output, kernel)?;
    cache.output.expect_same_shape(OP, d_output)?;
    let (c, h, w, taps) = (geo.c, geo.h, geo.w, geo.taps);
    let kmat = kernel_matrix(kernel, c, taps);
    let mut d_kmat = vec![T::zero(); c * c * taps];
    let mut grad = d_output.clone();
    let mut cols = vec![T::zero(); c * taps * w];
    let mut d_cols = vec![T::zero(); c * taps * w];
    let mut dz = vec![T::zero(); c * w];
    let schedule = geo.schedule(direction);
    let item_len = c * h * w;
    for ((g_item, out_item), pre_item) in grad
        .data_mut()
        .chunks_mut(item_len)
        .zip(cache.output.data().chunks(item_len))
        .zip(cache.pre.data().chunks(item_len))
    {
        for &(row, prev) in schedule.iter().rev() {
            for i in 0..c {
                let base = (i * h + row) * w;
                for k in 0..w {
                    dz[i * w + k] = if pre_item[base + k] > T::zero() {
                        g_item[base + k]
                    } else {
                        T::zero()
                    };
                }
            }
            geo.row_cols(out_item, prev, &mut cols);
            gemm(MatRef::rm(&dz, c, w), MatRef::rm_t(&cols, c * taps, w), T::one(), &mut d_kmat);
            gemm(MatRef::rm_t(&kmat, c, c * taps), MatRef::rm(&dz, c, w), T::zero(), &mut d_cols);
            geo.row_cols_adjoint(&d_cols, prev, g_item);
        }
    }
    let mut d_kernel = Tensor::zeros(kernel.shape());
    let dk = d_kernel.data_mut();
    for m in 0..c {
        for i in 0..c {
            for t in 0..taps {
                dk[(m * c + i) * taps + t] = d_kmat[i * c * taps + m * taps + t];
            }
        }
    }
    Ok(LayerGrads {
        d_input: grad,
        d_weights: vec![d_kernel],
    })
}

/// Recomputes the forward pass, then differentiates it.
pub fn spatial_conv_vertical_backward<T: Real>(
    input: &Tensor<T>,
    params: &SpatialConvParams<T>,
    d_output: &Tensor<T>,
) -> Result<LayerGrads<T>> {
    let cache = spatial_forward(input, &params.kernel, params.direction)?;
    spatial_backward(&cache, &params.kernel, params.direction, d_output)
}

/// A spatial pass bound to a kernel slot.
#[derive(Clone, Debug)]
pub struct SpatialConv {
    pub channels: usize,
    pub width: usize,
    pub direction: Direction,
    kernel: ParamId,
}

impl SpatialConv {
    /// Kernel entries start small, normal with variance `2 / (5·C·w)`,
    /// so the recurrence does not amplify activations row after row.
    pub fn new<T: Real>(
        b: &mut ParamBuilder<T>,
        name: &str,
        channels: usize,
        width: usize,
        direction: Direction,
    ) -> Result<Self> {
        if width % 2 == 0 {
            return Err(Error::Config(format!("spatial kernel width {width} must be odd")));
        }
        let std = (2.0 / (5 * channels * width) as f64).sqrt();
        let kernel = b.normal(format!("{name}.kernel"), &[channels, channels, width], std);
        Ok(SpatialConv {
            channels,
            width,
            direction,
            kernel,
        })
    }

    pub fn kernel(&self) -> ParamId {
        self.kernel
    }

    pub fn forward<T: Real>(&self, p: &ModelParams<T>, x: &Tensor<T>) -> Result<SpatialCache<T>> {
        spatial_forward(x, p.get(self.kernel), self.direction)
    }

    pub fn backward<T: Real>(
        &self,
        p: &ModelParams<T>,
        cache: &SpatialCache<T>,
        dy: &Tensor<T>,
        g: &mut Gradients<T>,
    ) -> Result<Tensor<T>> {
        let grads = spatial_backward(cache, p.get(self.kernel), self.direction, dy)?;
        g.accumulate(self.kernel, &grads.d_weights[0])?;
        Ok(grads.d_input)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::testing::{dims, random_tensor};
    use crate::oracles::naive_spatial;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(kernel: Tensor<f64>, direction: Direction) -> SpatialConvParams<f64> {
        SpatialConvParams { kernel, direction }
    }

    #[test]
    fn zero_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_tensor::<f64>(&mut rng, &[2, 3, 5, 4]);
        for dir in [Direction::Down, Direction::Up] {
            let y = spatial_conv_vertical(&x, &params(Tensor::zeros(&[3, 3, 9]), dir)).unwrap();
            assert_eq!(y, x);
        }
    }

    #[test]
    fn running_sum_down_a_column() {
        let x = Tensor::from_vec(&[1, 1, 3, 1], vec![1.0, 2.0, 3.0]).unwrap();
        let y = spatial_conv_vertical(&x, &params(Tensor::full(&[1, 1, 1], 1.0), Direction::Down)).unwrap();
        assert_eq!(y.data(), &[1.0, 3.0, 6.0]);
        let y = spatial_conv_vertical(&x, &params(Tensor::full(&[1, 1, 1], 1.0), Direction::Up)).unwrap();
        assert_eq!(y.data(), &[6.0, 5.0, 3.0]);
    }

    #[test]
    fn matches_literal_recurrence() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_tensor::<f64>(&mut rng, &[2, 4, 6, 8]);
        for (taps, dir) in [(3, Direction::Down), (9, Direction::Up), (1, Direction::Down)] {
            let k = random_tensor::<f64>(&mut rng, &[4, 4, taps]);
            let fast = spatial_conv_vertical(&x, &params(k.clone(), dir)).unwrap();
            let slow = naive_spatial(x.data(), dims(&x), k.data(), taps, dir == Direction::Up);
            let err = fast
                .data()
                .iter()
                .zip(&slow)
                .map(|(a, b)| (a - b).abs() / b.abs().max(1.0))
                .fold(0.0, f64::max);
            assert!(err <= 1e-12, "taps {taps}: {err}");
        }
    }

    #[test]
    fn zero_kernel_backward_passes_gradient_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_tensor::<f64>(&mut rng, &[1, 2, 4, 3]);
        let g = random_tensor::<f64>(&mut rng, x.shape());
        let grads = spatial_conv_vertical_backward(&x, &params(Tensor::zeros(&[2, 2, 3]), Direction::Down), &g)
            .unwrap();
        assert_eq!(grads.d_input, g);
        assert!(grads.d_weights[0].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_row_never_fires() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_tensor::<f64>(&mut rng, &[1, 3, 1, 5]);
        let k = random_tensor::<f64>(&mut rng, &[3, 3, 3]);
        let g = random_tensor::<f64>(&mut rng, x.shape());
        for dir in [Direction::Down, Direction::Up] {
            let p = params(k.clone(), dir);
            assert_eq!(spatial_conv_vertical(&x, &p).unwrap(), x);
            let grads = spatial_conv_vertical_backward(&x, &p, &g).unwrap();
            assert_eq!(grads.d_input, g);
            assert!(grads.d_weights[0].data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn rejects_bad_kernels() {
        let x = Tensor::<f32>::zeros(&[1, 2, 3, 3]);
        for shape in [vec![2, 2, 2], vec![3, 3, 3], vec![2, 3, 3], vec![2, 2]] {
            let k = Tensor::zeros(&shape);
            let p = SpatialConvParams {
                kernel: k,
                direction: Direction::Down,
            };
            assert!(spatial_conv_vertical(&x, &p).is_err(), "{shape:?}");
        }
    }
}
