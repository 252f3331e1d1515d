use crate::blocks::layers::{relu, relu_back, BatchNorm, Conv, Ctx};
use crate::error::{Error, Result};
use crate::numerics::{BatchNormCache, ConvSpec};
use crate::params::{Gradients, ModelParams, ParamBuilder};
use crate::tensor::{Real, Tensor};

/// Factorized residual block: two 3×1/1×3 convolution pairs, the second pair
/// dilated, with the branch added back onto the input.
///
/// ```text
/// 3×1 → relu → 1×3 → bn → relu → 3×1(d) → relu → 1×3(d) → bn → [dropout]
/// out = relu(input + branch)
/// ```
#[derive(Clone, Debug)]
pub struct NonBottleneck1d {
    pub channels: usize,
    pub dilation: usize,
    pub dropout: f64,
    pub conv1: Conv,
    pub conv2: Conv,
    pub bn1: BatchNorm,
    pub conv3: Conv,
    pub conv4: Conv,
    pub bn2: BatchNorm,
}

pub struct NonBottleneck1dCache<T> {
    input: Tensor<T>,
    a1: Tensor<T>,
    r1: Tensor<T>,
    bn1: BatchNormCache<T>,
    b1: Tensor<T>,
    r2: Tensor<T>,
    a3: Tensor<T>,
    r3: Tensor<T>,
    bn2: BatchNormCache<T>,
    mask: Option<Vec<T>>,
    sum: Tensor<T>,
}

impl NonBottleneck1d {
    pub fn new<T: Real>(
        b: &mut ParamBuilder<T>,
        name: &str,
        channels: usize,
        dilation: usize,
        dropout: f64,
    ) -> Result<Self> {
        if dilation == 0 {
            return Err(Error::Config("dilation must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::Config(format!("dropout rate {dropout} outside [0, 1)")));
        }
        let c = channels;
        let d = dilation;
        Ok(NonBottleneck1d {
            channels,
            dilation,
            dropout,
            conv1: Conv::new(b, &format!("{name}.conv3x1_1"), ConvSpec::new(c, c, (3, 1)).pad(1, 0)),
            conv2: Conv::new(b, &format!("{name}.conv1x3_1"), ConvSpec::new(c, c, (1, 3)).pad(0, 1)),
            bn1: BatchNorm::new(b, &format!("{name}.bn1"), c),
            conv3: Conv::new(
                b,
                &format!("{name}.conv3x1_2"),
                ConvSpec::new(c, c, (3, 1)).dilation(d, 1).pad(d, 0),
            ),
            conv4: Conv::new(
                b,
                &format!("{name}.conv1x3_2"),
                ConvSpec::new(c, c, (1, 3)).dilation(1, d).pad(0, d),
            ),
            bn2: BatchNorm::new(b, &format!("{name}.bn2"), c),
        })
    }

    pub fn forward<T: Real>(
        &self,
        p: &ModelParams<T>,
        x: &Tensor<T>,
        ctx: &mut Ctx<T>,
    ) -> Result<(Tensor<T>, NonBottleneck1dCache<T>)> {
        let (_, c, _, _) = x.dims4("nonbt1d_forward")?;
        if c != self.channels {
            return Err(Error::shape(
                "nonbt1d_forward",
                format!("input has {c} channels, block expects {}", self.channels),
            ));
        }
        let a1 = self.conv1.forward(p, x)?;
        let r1 = relu(&a1)?;
        let a2 = self.conv2.forward(p, &r1)?;
        let (b1, bn1) = self.bn1.forward(p, &a2, ctx)?;
        let r2 = relu(&b1)?;
        let a3 = self.conv3.forward(p, &r2)?;
        let r3 = relu(&a3)?;
        let a4 = self.conv4.forward(p, &r3)?;
        let (mut branch, bn2) = self.bn2.forward(p, &a4, ctx)?;
        let mask = ctx.dropout_mask(self.dropout, branch.len());
        if let Some(m) = &mask {
            for (v, &k) in branch.data_mut().iter_mut().zip(m) {
                *v *= k;
            }
        }
        let sum = x.add(&branch)?;
        let y = relu(&sum)?;
        Ok((
            y,
            NonBottleneck1dCache {
                input: x.clone(),
                a1,
                r1,
                bn1,
                b1,
                r2,
                a3,
                r3,
                bn2,
                mask,
                sum,
            },
        ))
    }

    pub fn backward<T: Real>(
        &self,
        p: &ModelParams<T>,
        cache: &NonBottleneck1dCache<T>,
        dy: &Tensor<T>,
        g: &mut Gradients<T>,
    ) -> Result<Tensor<T>> {
        let d_sum = relu_back(&cache.sum, dy)?;
        let mut d = d_sum.clone();
        if let Some(m) = &cache.mask {
            for (v, &k) in d.data_mut().iter_mut().zip(m) {
                *v *= k;
            }
        }
        let d = self.bn2.backward(p, &cache.bn2, &d, g)?;
        let d = self.conv4.backward(p, &cache.r3, &d, g)?;
        let d = relu_back(&cache.a3, &d)?;
        let d = self.conv3.backward(p, &cache.r2, &d, g)?;
        let d = relu_back(&cache.b1, &d)?;
        let d = self.bn1.backward(p, &cache.bn1, &d, g)?;
        let d = self.conv2.backward(p, &cache.r1, &d, g)?;
        let d = relu_back(&cache.a1, &d)?;
        let mut dx = self.conv1.backward(p, &cache.input, &d, g)?;
        dx.add_assign(&d_sum)?;
        Ok(dx)
    }
}
