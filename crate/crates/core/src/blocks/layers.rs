//! Primitive layers bound to parameter slots.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::numerics::{self, BatchNormCache, ConvSpec, ConvTransposeSpec, Mode, BN_MOMENTUM};
use crate::params::{Gradients, ModelParams, ParamBuilder, ParamId};
use crate::tensor::{Real, Tensor};

/// Per-forward state: the normalization mode, batch statistics waiting to be
/// folded into the running buffers, and the dropout generator.
pub struct Ctx<T> {
    pub mode: Mode,
    bn_updates: Vec<BnUpdate<T>>,
    rng: ChaCha8Rng,
}

#[derive(Clone, Debug)]
pub struct BnUpdate<T> {
    mean: ParamId,
    var: ParamId,
    cache_mean: Vec<T>,
    cache_var: Vec<T>,
}

impl<T: Real> Ctx<T> {
    pub fn new(mode: Mode) -> Self {
        Self::seeded(mode, 0)
    }

    pub fn seeded(mode: Mode, dropout_seed: u64) -> Self {
        Ctx {
            mode,
            bn_updates: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(dropout_seed),
        }
    }

    pub fn into_bn_updates(self) -> Vec<BnUpdate<T>> {
        self.bn_updates
    }

    /// Inverted-dropout mask (`0` or `1/(1−rate)`), or `None` when inactive.
    pub(crate) fn dropout_mask(&mut self, rate: f64, len: usize) -> Option<Vec<T>> {
        if self.mode != Mode::Train || rate <= 0.0 {
            return None;
        }
        let keep = T::from_f64_lossy(1.0 / (1.0 - rate));
        Some(
            (0..len)
                .map(|_| if self.rng.random::<f64>() < rate { T::zero() } else { keep })
                .collect(),
        )
    }
}

/// Fold recorded batch statistics into the running-statistics buffers.
pub fn apply_bn_updates<T: Real>(params: &mut ModelParams<T>, updates: &[BnUpdate<T>]) {
    let m = T::from_f64_lossy(BN_MOMENTUM);
    let keep = T::one() - m;
    for u in updates {
        for (r, &b) in params.get_mut(u.mean).data_mut().iter_mut().zip(&u.cache_mean) {
            *r = keep * *r + m * b;
        }
        for (r, &b) in params.get_mut(u.var).data_mut().iter_mut().zip(&u.cache_var) {
            *r = keep * *r + m * b;
        }
    }
}

pub(crate) fn relu<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    numerics::relu_forward(x)
}

pub(crate) fn relu_back<T: Real>(pre: &Tensor<T>, d: &Tensor<T>) -> Result<Tensor<T>> {
    numerics::relu_backward(pre, d)
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub spec: ConvSpec,
    weight: ParamId,
    bias: Option<ParamId>,
}

impl Conv {
    pub fn new<T: Real>(b: &mut ParamBuilder<T>, name: &str, spec: ConvSpec) -> Self {
        let fan_in = spec.in_channels * spec.kernel_h * spec.kernel_w;
        let weight = b.he(format!("{name}.weight"), &spec.weight_shape(), fan_in);
        let bias = spec
            .has_bias
            .then(|| b.constant(format!("{name}.bias"), &[spec.out_channels], 0.0));
        Conv { spec, weight, bias }
    }

    pub fn weight(&self) -> ParamId {
        self.weight
    }

    pub fn forward<T: Real>(&self, p: &ModelParams<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        numerics::conv2d_forward(x, p.get(self.weight), self.bias.map(|id| p.get(id)), &self.spec)
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward<T: Real>(
        &self,
        p: &ModelParams<T>,
        x: &Tensor<T>,
        dy: &Tensor<T>,
        g: &mut Gradients<T>,
    ) -> Result<Tensor<T>> {
        let grads = numerics::conv2d_backward(x, p.get(self.weight), &self.spec, dy)?;
        g.accumulate(self.weight, &grads.d_weights[0])?;
        if let Some(id) = self.bias {
            g.accumulate(id, &grads.d_weights[1])?;
        }
        Ok(grads.d_input)
    }
}

#[derive(Clone, Debug)]
pub struct ConvTranspose {
    pub spec: ConvTransposeSpec,
    weight: ParamId,
    bias: Option<ParamId>,
}

impl ConvTranspose {
    pub fn new<T: Real>(b: &mut ParamBuilder<T>, name: &str, spec: ConvTransposeSpec) -> Self {
        let c = &spec.conv;
        let fan_in = c.in_channels * c.kernel_h * c.kernel_w;
        let weight = b.he(format!("{name}.weight"), &spec.weight_shape(), fan_in);
        let bias = c
            .has_bias
            .then(|| b.constant(format!("{name}.bias"), &[c.out_channels], 0.0));
        ConvTranspose { spec, weight, bias }
    }

    pub fn forward<T: Real>(&self, p: &ModelParams<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        numerics::transposed_conv2d_forward(x, p.get(self.weight), self.bias.map(|id| p.get(id)), &self.spec)
    }

    pub fn backward<T: Real>(
        &self,
        p: &ModelParams<T>,
        x: &Tensor<T>,
        dy: &Tensor<T>,
        g: &mut Gradients<T>,
    ) -> Result<Tensor<T>> {
        let grads = numerics::transposed_conv2d_backward(x, p.get(self.weight), &self.spec, dy)?;
        g.accumulate(self.weight, &grads.d_weights[0])?;
        if let Some(id) = self.bias {
            g.accumulate(id, &grads.d_weights[1])?;
        }
        Ok(grads.d_input)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub channels: usize,
    gamma: ParamId,
    beta: ParamId,
    running_mean: ParamId,
    running_var: ParamId,
}

impl BatchNorm {
    pub fn new<T: Real>(b: &mut ParamBuilder<T>, name: &str, channels: usize) -> Self {
        BatchNorm {
            channels,
            gamma: b.constant(format!("{name}.gamma"), &[channels], 1.0),
            beta: b.constant(format!("{name}.beta"), &[channels], 0.0),
            running_mean: b.buffer(format!("{name}.running_mean"), &[channels], 0.0),
            running_var: b.buffer(format!("{name}.running_var"), &[channels], 1.0),
        }
    }

    pub fn gamma(&self) -> ParamId {
        self.gamma
    }

    pub fn beta(&self) -> ParamId {
        self.beta
    }

    pub fn forward<T: Real>(
        &self,
        p: &ModelParams<T>,
        x: &Tensor<T>,
        ctx: &mut Ctx<T>,
    ) -> Result<(Tensor<T>, BatchNormCache<T>)> {
        let (y, cache) = numerics::batchnorm2d_forward(
            x,
            p.get(self.gamma),
            p.get(self.beta),
            p.get(self.running_mean),
            p.get(self.running_var),
            ctx.mode,
        )?;
        if ctx.mode == Mode::Train {
            ctx.bn_updates.push(BnUpdate {
                mean: self.running_mean,
                var: self.running_var,
                cache_mean: cache.batch_mean.clone(),
                cache_var: cache.batch_var.clone(),
            });
        }
        Ok((y, cache))
    }

    pub fn backward<T: Real>(
        &self,
        p: &ModelParams<T>,
        cache: &BatchNormCache<T>,
        dy: &Tensor<T>,
        g: &mut Gradients<T>,
    ) -> Result<Tensor<T>> {
        let grads = numerics::batchnorm2d_backward(cache, p.get(self.gamma), dy)?;
        g.accumulate(self.gamma, &grads.d_weights[0])?;
        g.accumulate(self.beta, &grads.d_weights[1])?;
        Ok(grads.d_input)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    weight: ParamId,
    bias: ParamId,
}

impl Linear {
    pub fn new<T: Real>(b: &mut ParamBuilder<T>, name: &str, in_features: usize, out_features: usize) -> Self {
        Linear {
            in_features,
            out_features,
            weight: b.he(format!("{name}.weight"), &[in_features, out_features], in_features),
            bias: b.constant(format!("{name}.bias"), &[out_features], 0.0),
        }
    }

    pub fn forward<T: Real>(&self, p: &ModelParams<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        numerics::fully_connected_forward(x, p.get(self.weight), p.get(self.bias))
    }

    pub fn backward<T: Real>(
        &self,
        p: &ModelParams<T>,
        x: &Tensor<T>,
        dy: &Tensor<T>,
        g: &mut Gradients<T>,
    ) -> Result<Tensor<T>> {
        let grads = numerics::fully_connected_backward(x, p.get(self.weight), dy)?;
        g.accumulate(self.weight, &grads.d_weights[0])?;
        g.accumulate(self.bias, &grads.d_weights[1])?;
        Ok(grads.d_input)
    }
}
