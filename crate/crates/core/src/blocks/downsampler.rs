use crate::blocks::layers::{relu, relu_back, BatchNorm, Conv, Ctx};
use crate::error::{Error, Result};
use crate::numerics::{self, BatchNormCache, ConvSpec};
use crate::params::{Gradients, ModelParams, ParamBuilder};
use crate::tensor::{Real, Tensor};

/// Halves H and W by concatenating a strided 3×3 convolution (channels
/// `[0, out − in)`) with a 2×2 max pool of the input (the remaining `in`
/// channels), then applies batch norm and ReLU.
#[derive(Clone, Debug)]
pub struct Downsampler {
    pub in_channels: usize,
    pub out_channels: usize,
    pub conv: Conv,
    pub bn: BatchNorm,
}

pub struct DownsamplerCache<T> {
    input: Tensor<T>,
    argmax: Vec<usize>,
    bn: BatchNormCache<T>,
    pre_relu: Tensor<T>,
}

impl Downsampler {
    pub fn new<T: Real>(b: &mut ParamBuilder<T>, name: &str, in_channels: usize, out_channels: usize) -> Result<Self> {
        if out_channels <= in_channels {
            return Err(Error::Config(format!(
                "downsampler needs out_channels > in_channels, got {in_channels} -> {out_channels}"
            )));
        }
        let spec = ConvSpec::new(in_channels, out_channels - in_channels, (3, 3))
            .stride(2, 2)
            .pad(1, 1);
        Ok(Downsampler {
            in_channels,
            out_channels,
            conv: Conv::new(b, &format!("{name}.conv"), spec),
            bn: BatchNorm::new(b, &format!("{name}.bn"), out_channels),
        })
    }

    pub fn forward<T: Real>(
        &self,
        p: &ModelParams<T>,
        x: &Tensor<T>,
        ctx: &mut Ctx<T>,
    ) -> Result<(Tensor<T>, DownsamplerCache<T>)> {
        const OP: &str = "downsampler_forward";
        let (_, c, h, w) = x.dims4(OP)?;
        if c != self.in_channels {
            return Err(Error::shape(OP, format!("input has {c} channels, block expects {}", self.in_channels)));
        }
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape(OP, format!("H={h} and W={w} must both be even")));
        }
        let conv = self.conv.forward(p, x)?;
        let (pooled, argmax) = numerics::maxpool2x2_forward(x)?;
        let merged = Tensor::concat_channels(&conv, &pooled)?;
        let (pre_relu, bn) = self.bn.forward(p, &merged, ctx)?;
        let y = relu(&pre_relu)?;
        Ok((
            y,
            DownsamplerCache {
                input: x.clone(),
                argmax,
                bn,
                pre_relu,
            },
        ))
    }

    pub fn backward<T: Real>(
        &self,
        p: &ModelParams<T>,
        cache: &DownsamplerCache<T>,
        dy: &Tensor<T>,
        g: &mut Gradients<T>,
    ) -> Result<Tensor<T>> {
        let d = relu_back(&cache.pre_relu, dy)?;
        let d = self.bn.backward(p, &cache.bn, &d, g)?;
        let (d_conv, d_pool) = d.split_channels(self.out_channels - self.in_channels)?;
        let mut dx = self.conv.backward(p, &cache.input, &d_conv, g)?;
        dx.add_assign(&numerics::maxpool2x2_backward(&cache.argmax, &d_pool)?)?;
        Ok(dx)
    }
}
