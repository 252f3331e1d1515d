use crate::blocks::layers::{relu, relu_back, BatchNorm, Conv, Ctx};
use crate::error::{Error, Result};
use crate::numerics::{BatchNormCache, ConvSpec};
use crate::params::{Gradients, ModelParams, ParamBuilder};
use crate::tensor::{Real, Tensor};

/// Fuses the output of the latest downsampler (`skip`) with the trunk that
/// has passed the following convolutional block.
///
/// ```text
/// concat(skip, trunk) → 3×3 (2C→C) → bn → relu → 3×1 → relu → 1×3 → bn
/// out = relu(result + trunk)
/// ```
///
/// The result is added onto the trunk, so with zero merge weights the block
/// reduces to `relu(trunk)`.
#[derive(Clone, Debug)]
pub struct FeatureMerge {
    pub channels: usize,
    pub reduce: Conv,
    pub bn1: BatchNorm,
    pub conv3x1: Conv,
    pub conv1x3: Conv,
    pub bn2: BatchNorm,
}

pub struct FeatureMergeCache<T> {
    merged: Tensor<T>,
    bn1: BatchNormCache<T>,
    b1: Tensor<T>,
    r1: Tensor<T>,
    a2: Tensor<T>,
    r2: Tensor<T>,
    bn2: BatchNormCache<T>,
    sum: Tensor<T>,
}

impl FeatureMerge {
    pub fn new<T: Real>(b: &mut ParamBuilder<T>, name: &str, channels: usize) -> Self {
        let c = channels;
        FeatureMerge {
            channels,
            reduce: Conv::new(b, &format!("{name}.reduce3x3"), ConvSpec::new(2 * c, c, (3, 3)).pad(1, 1)),
            bn1: BatchNorm::new(b, &format!("{name}.bn1"), c),
            conv3x1: Conv::new(b, &format!("{name}.conv3x1"), ConvSpec::new(c, c, (3, 1)).pad(1, 0)),
            conv1x3: Conv::new(b, &format!("{name}.conv1x3"), ConvSpec::new(c, c, (1, 3)).pad(0, 1)),
            bn2: BatchNorm::new(b, &format!("{name}.bn2"), c),
        }
    }

    pub fn forward<T: Real>(
        &self,
        p: &ModelParams<T>,
        skip: &Tensor<T>,
        trunk: &Tensor<T>,
        ctx: &mut Ctx<T>,
    ) -> Result<(Tensor<T>, FeatureMergeCache<T>)> {
        const OP: &str = "feature_merge_forward";
        skip.expect_same_shape(OP, trunk)?;
        let (_, c, _, _) = trunk.dims4(OP)?;
        if c != self.channels {
            return Err(Error::shape(OP, format!("inputs have {c} channels, block expects {}", self.channels)));
        }
        let merged = Tensor::concat_channels(skip, trunk)?;
        let a1 = self.reduce.forward(p, &merged)?;
        let (b1, bn1) = self.bn1.forward(p, &a1, ctx)?;
        let r1 = relu(&b1)?;
        let a2 = self.conv3x1.forward(p, &r1)?;
        let r2 = relu(&a2)?;
        let a3 = self.conv1x3.forward(p, &r2)?;
        let (b2, bn2) = self.bn2.forward(p, &a3, ctx)?;
        let sum = b2.add(trunk)?;
        let y = relu(&sum)?;
        Ok((
            y,
            FeatureMergeCache {
                merged,
                bn1,
                b1,
                r1,
                a2,
                r2,
                bn2,
                sum,
            },
        ))
    }

    /// Returns `(d_skip, d_trunk)`.
    pub fn backward<T: Real>(
        &self,
        p: &ModelParams<T>,
        cache: &FeatureMergeCache<T>,
        dy: &Tensor<T>,
        g: &mut Gradients<T>,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        let d_sum = relu_back(&cache.sum, dy)?;
        let d = self.bn2.backward(p, &cache.bn2, &d_sum, g)?;
        let d = self.conv1x3.backward(p, &cache.r2, &d, g)?;
        let d = relu_back(&cache.a2, &d)?;
        let d = self.conv3x1.backward(p, &cache.r1, &d, g)?;
        let d = relu_back(&cache.b1, &d)?;
        let d = self.bn1.backward(p, &cache.bn1, &d, g)?;
        let d = self.reduce.backward(p, &cache.merged, &d, g)?;
        let (d_skip, mut d_trunk) = d.split_channels(self.channels)?;
        d_trunk.add_assign(&d_sum)?;
        Ok((d_skip, d_trunk))
    }
}
