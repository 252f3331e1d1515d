use crate::blocks::downsampler::DownsamplerCache;
use crate::blocks::exchange::InfoExchangeCache;
use crate::blocks::layers::{relu, relu_back};
use crate::blocks::merge::FeatureMergeCache;
use crate::blocks::nonbt1d::NonBottleneck1dCache;
use crate::blocks::{
    BatchNorm, BnUpdate, Conv, ConvTranspose, Ctx, Downsampler, FeatureMerge, InfoExchange, Linear, NonBottleneck1d,
};
use crate::error::{Error, Result};
use crate::network::config::ModelConfig;
use crate::numerics::{self, BatchNormCache, ConvSpec, ConvTransposeSpec, Mode};
use crate::params::{Gradients, ModelParams, ParamBuilder};
use crate::tensor::{Real, Tensor};

/// What the two decoder heads produce for a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelOutput<T = f32> {
    /// `N × classes × H × W`, channel 0 background, 1.. lanes left to right.
    pub seg_logits: Tensor<T>,
    /// `N × lanes`, sigmoid probabilities.
    pub exist_probs: Tensor<T>,
}

/// Result of one forward pass. Train-mode passes keep the activations
/// needed by [`LaneNet::backward`] and the batch statistics that
/// [`apply_bn_updates`](crate::blocks::apply_bn_updates) folds into the
/// running buffers.
pub struct Forward<T = f32> {
    pub output: ModelOutput<T>,
    pub encoder_output: Tensor<T>,
    pub bn_updates: Vec<BnUpdate<T>>,
    cache: Option<ModelCache<T>>,
}

impl<T> Forward<T> {
    pub fn has_cache(&self) -> bool {
        self.cache.is_some()
    }

    /// Drops the activation cache, e.g. to free memory before evaluation.
    pub fn into_output(self) -> ModelOutput<T> {
        self.output
    }
}

struct ModelCache<T> {
    down1: DownsamplerCache<T>,
    down2: DownsamplerCache<T>,
    stage2: Vec<NonBottleneck1dCache<T>>,
    merge1: FeatureMergeCache<T>,
    down3: DownsamplerCache<T>,
    exchange: InfoExchangeCache<T>,
    merge2: FeatureMergeCache<T>,
    seg: SegCache<T>,
    exist: ExistCache<T>,
}

/// `tconv → bn → relu → residual blocks`, one upsampling step of the
/// segmentation decoder.
#[derive(Clone, Debug)]
struct UpStage {
    up: ConvTranspose,
    bn: BatchNorm,
    blocks: Vec<NonBottleneck1d>,
}

struct UpStageCache<T> {
    input: Tensor<T>,
    bn: BatchNormCache<T>,
    pre_relu: Tensor<T>,
    blocks: Vec<NonBottleneck1dCache<T>>,
}

struct SegCache<T> {
    stages: Vec<UpStageCache<T>>,
    head_input: Tensor<T>,
}

struct ExistCache<T> {
    input: Tensor<T>,
    bn: BatchNormCache<T>,
    pre_relu: Tensor<T>,
    flat: Tensor<T>,
    hidden_pre: Tensor<T>,
    hidden: Tensor<T>,
    probs: Tensor<T>,
}

/// The single-encoder / double-decoder lane network. The struct holds only
/// architecture; weights live in a [`ModelParams`] built alongside it.
#[derive(Clone, Debug)]
pub struct LaneNet {
    pub config: ModelConfig,
    down1: Downsampler,
    down2: Downsampler,
    stage2: Vec<NonBottleneck1d>,
    merge1: FeatureMerge,
    down3: Downsampler,
    exchange: InfoExchange,
    merge2: FeatureMerge,
    seg_stages: Vec<UpStage>,
    seg_head: ConvTranspose,
    exist_conv: Conv,
    exist_bn: BatchNorm,
    exist_fc1: Linear,
    exist_fc2: Linear,
}

impl LaneNet {
    /// Builds the architecture and its seeded initial parameters.
    pub fn build<T: Real>(config: &ModelConfig) -> Result<(LaneNet, ModelParams<T>)> {
        config.validate()?;
        let mut builder = ParamBuilder::<T>::new(config.seed);
        let b = &mut builder;
        let [c1, c2, c3] = config.stage_channels;
        let drop = config.dropout;

        let down1 = Downsampler::new(b, "enc.down1", 3, c1)?;
        let down2 = Downsampler::new(b, "enc.down2", c1, c2)?;
        let stage2 = (0..config.stage2_blocks)
            .map(|i| NonBottleneck1d::new(b, &format!("enc.stage2.{i}"), c2, 1, drop))
            .collect::<Result<_>>()?;
        let merge1 = FeatureMerge::new(b, "enc.merge1", c2);
        let down3 = Downsampler::new(b, "enc.down3", c2, c3)?;
        let exchange = InfoExchange::new(
            b,
            "enc.exchange",
            c3,
            config.spatial_kernel_width,
            &config.layout()?,
            drop,
        )?;
        let merge2 = FeatureMerge::new(b, "enc.merge2", c3);

        let mut seg_stages = Vec::new();
        for (i, (cin, cout)) in [(c3, c2), (c2, c1)].into_iter().enumerate() {
            let name = format!("seg.up{}", i + 1);
            seg_stages.push(UpStage {
                up: ConvTranspose::new(b, &name, ConvTransposeSpec::upsample2x(cin, cout)),
                bn: BatchNorm::new(b, &format!("{name}.bn"), cout),
                blocks: (0..2)
                    .map(|j| NonBottleneck1d::new(b, &format!("{name}.block{j}"), cout, 1, 0.0))
                    .collect::<Result<_>>()?,
            });
        }
        let seg_head = ConvTranspose::new(b, "seg.head", ConvTransposeSpec::upsample2x(c1, config.num_classes));

        let ce = config.exist_channels();
        let exist_spec = ConvSpec::new(c3, ce, (3, 3)).stride(2, 2).pad(1, 1);
        let (_, eh, ew) = config.encoder_shape();
        let (oh, ow) = exist_spec.output_size(eh, ew)?;
        let exist_conv = Conv::new(b, "exist.conv", exist_spec);
        let exist_bn = BatchNorm::new(b, "exist.bn", ce);
        let exist_fc1 = Linear::new(b, "exist.fc1", ce * oh * ow, config.exist_hidden);
        let exist_fc2 = Linear::new(b, "exist.fc2", config.exist_hidden, config.num_lanes);

        let net = LaneNet {
            config: config.clone(),
            down1,
            down2,
            stage2,
            merge1,
            down3,
            exchange,
            merge2,
            seg_stages,
            seg_head,
            exist_conv,
            exist_bn,
            exist_fc1,
            exist_fc2,
        };
        Ok((net, builder.finish()))
    }

    pub fn forward<T: Real>(&self, p: &ModelParams<T>, input: &Tensor<T>, mode: Mode) -> Result<Forward<T>> {
        self.forward_seeded(p, input, mode, 0)
    }

    /// Like [`forward`](Self::forward) with an explicit dropout seed.
    pub fn forward_seeded<T: Real>(
        &self,
        p: &ModelParams<T>,
        input: &Tensor<T>,
        mode: Mode,
        dropout_seed: u64,
    ) -> Result<Forward<T>> {
        let cfg = &self.config;
        let (n, _, _, _) = input.dims4("LaneNet::forward")?;
        input.expect_shape("LaneNet::forward", "input", &[n, 3, cfg.input_h, cfg.input_w])?;
        let mut context = Ctx::seeded(mode, dropout_seed);
        let ctx = &mut context;

        let (x, down1) = self.down1.forward(p, input, ctx)?;
        let (s2, down2) = self.down2.forward(p, &x, ctx)?;
        let mut trunk = s2.clone();
        let mut stage2 = Vec::with_capacity(self.stage2.len());
        for block in &self.stage2 {
            let (y, c) = block.forward(p, &trunk, ctx)?;
            stage2.push(c);
            trunk = y;
        }
        let (m1, merge1) = self.merge1.forward(p, &s2, &trunk, ctx)?;
        let (s3, down3) = self.down3.forward(p, &m1, ctx)?;
        let (t3, exchange) = self.exchange.forward(p, &s3, ctx)?;
        let (enc, merge2) = self.merge2.forward(p, &s3, &t3, ctx)?;

        let (seg_logits, seg) = self.seg_forward(p, &enc, ctx)?;
        let (exist_probs, exist) = self.exist_forward(p, &enc, ctx)?;

        let cache = (mode == Mode::Train).then(|| ModelCache {
            down1,
            down2,
            stage2,
            merge1,
            down3,
            exchange,
            merge2,
            seg,
            exist,
        });
        let bn_updates = context.into_bn_updates();
        Ok(Forward {
            output: ModelOutput {
                seg_logits,
                exist_probs,
            },
            encoder_output: enc,
            bn_updates,
            cache,
        })
    }

    fn seg_forward<T: Real>(
        &self,
        p: &ModelParams<T>,
        enc: &Tensor<T>,
        ctx: &mut Ctx<T>,
    ) -> Result<(Tensor<T>, SegCache<T>)> {
        let mut x = enc.clone();
        let mut stages = Vec::with_capacity(self.seg_stages.len());
        for stage in &self.seg_stages {
            let up = stage.up.forward(p, &x)?;
            let (pre_relu, bn) = stage.bn.forward(p, &up, ctx)?;
            let mut y = relu(&pre_relu)?;
            let mut blocks = Vec::with_capacity(stage.blocks.len());
            for block in &stage.blocks {
                let (z, c) = block.forward(p, &y, ctx)?;
                blocks.push(c);
                y = z;
            }
            stages.push(UpStageCache {
                input: x,
                bn,
                pre_relu,
                blocks,
            });
            x = y;
        }
        let logits = self.seg_head.forward(p, &x)?;
        Ok((logits, SegCache { stages, head_input: x }))
    }

    fn exist_forward<T: Real>(
        &self,
        p: &ModelParams<T>,
        enc: &Tensor<T>,
        ctx: &mut Ctx<T>,
    ) -> Result<(Tensor<T>, ExistCache<T>)> {
        let n = enc.shape()[0];
        let conv = self.exist_conv.forward(p, enc)?;
        let (pre_relu, bn) = self.exist_bn.forward(p, &conv, ctx)?;
        let act = relu(&pre_relu)?;
        let flat = act.reshape(&[n, self.exist_fc1.in_features])?;
        let hidden_pre = self.exist_fc1.forward(p, &flat)?;
        let hidden = relu(&hidden_pre)?;
        let logits = self.exist_fc2.forward(p, &hidden)?;
        let probs = numerics::sigmoid_forward(&logits)?;
        Ok((
            probs.clone(),
            ExistCache {
                input: enc.clone(),
                bn,
                pre_relu,
                flat,
                hidden_pre,
                hidden,
                probs,
            },
        ))
    }

    /// Gradients of `⟨d_seg, seg_logits⟩ + ⟨d_exist, exist_probs⟩` with
    /// respect to every parameter. The shared encoder receives the sum of
    /// both decoder contributions.
    pub fn backward<T: Real>(
        &self,
        p: &ModelParams<T>,
        fwd: &Forward<T>,
        d_seg_logits: &Tensor<T>,
        d_exist_probs: &Tensor<T>,
    ) -> Result<Gradients<T>> {
        self.backward_with_input(p, fwd, d_seg_logits, d_exist_probs).map(|(g, _)| g)
    }

    /// [`backward`](Self::backward) that also returns the input gradient.
    pub fn backward_with_input<T: Real>(
        &self,
        p: &ModelParams<T>,
        fwd: &Forward<T>,
        d_seg_logits: &Tensor<T>,
        d_exist_probs: &Tensor<T>,
    ) -> Result<(Gradients<T>, Tensor<T>)> {
        let cache = fwd.cache.as_ref().ok_or(Error::MissingCache)?;
        d_seg_logits.expect_same_shape("LaneNet::backward", &fwd.output.seg_logits)?;
        d_exist_probs.expect_same_shape("LaneNet::backward", &fwd.output.exist_probs)?;
        let mut grads = p.zero_grads();
        let g = &mut grads;

        let mut d_enc = self.seg_backward(p, &cache.seg, d_seg_logits, g)?;
        d_enc.add_assign(&self.exist_backward(p, &cache.exist, d_exist_probs, g)?)?;

        let (d_s3_skip, d_t3) = self.merge2.backward(p, &cache.merge2, &d_enc, g)?;
        let mut d_s3 = self.exchange.backward(p, &cache.exchange, &d_t3, g)?;
        d_s3.add_assign(&d_s3_skip)?;
        let d_m1 = self.down3.backward(p, &cache.down3, &d_s3, g)?;
        let (mut d_s2, mut d) = self.merge1.backward(p, &cache.merge1, &d_m1, g)?;
        for (block, c) in self.stage2.iter().zip(&cache.stage2).rev() {
            d = block.backward(p, c, &d, g)?;
        }
        d_s2.add_assign(&d)?;
        let d_x = self.down2.backward(p, &cache.down2, &d_s2, g)?;
        let d_input = self.down1.backward(p, &cache.down1, &d_x, g)?;
        Ok((grads, d_input))
    }

    fn seg_backward<T: Real>(
        &self,
        p: &ModelParams<T>,
        cache: &SegCache<T>,
        d_logits: &Tensor<T>,
        g: &mut Gradients<T>,
    ) -> Result<Tensor<T>> {
        let mut d = self.seg_head.backward(p, &cache.head_input, d_logits, g)?;
        for (stage, c) in self.seg_stages.iter().zip(&cache.stages).rev() {
            for (block, bc) in stage.blocks.iter().zip(&c.blocks).rev() {
                d = block.backward(p, bc, &d, g)?;
            }
            d = relu_back(&c.pre_relu, &d)?;
            d = stage.bn.backward(p, &c.bn, &d, g)?;
            d = stage.up.backward(p, &c.input, &d, g)?;
        }
        Ok(d)
    }

    fn exist_backward<T: Real>(
        &self,
        p: &ModelParams<T>,
        cache: &ExistCache<T>,
        d_probs: &Tensor<T>,
        g: &mut Gradients<T>,
    ) -> Result<Tensor<T>> {
        let d = numerics::sigmoid_backward(&cache.probs, d_probs)?;
        let d = self.exist_fc2.backward(p, &cache.hidden, &d, g)?;
        let d = relu_back(&cache.hidden_pre, &d)?;
        let d = self.exist_fc1.backward(p, &cache.flat, &d, g)?;
        let d = d.reshape(cache.pre_relu.shape())?;
        let d = relu_back(&cache.pre_relu, &d)?;
        let d = self.exist_bn.backward(p, &cache.bn, &d, g)?;
        self.exist_conv.backward(p, &cache.input, &d, g)
    }
}
