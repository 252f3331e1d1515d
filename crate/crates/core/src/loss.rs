//! Training objective: class-weighted pixel cross-entropy on the
//! segmentation logits plus a scaled binary cross-entropy on the lane
//! existence probabilities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::ModelOutput;
use crate::numerics;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub exist_weight: f64,
    pub background_class_weight: f64,
    pub lane_class_weight: f64,
    pub probability_clamp: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            exist_weight: 0.1,
            background_class_weight: 0.4,
            lane_class_weight: 1.0,
            probability_clamp: 1e-7,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.exist_weight > 0.0) {
            return Err(Error::Config(format!("exist_weight {} must be > 0", self.exist_weight)));
        }
        if !(self.probability_clamp > 0.0 && self.probability_clamp < 0.5) {
            return Err(Error::Config(format!(
                "probability_clamp {} outside (0, 0.5)",
                self.probability_clamp
            )));
        }
        if !(self.background_class_weight > 0.0 && self.lane_class_weight > 0.0) {
            return Err(Error::Config("class weights must be positive".into()));
        }
        Ok(())
    }

    pub fn class_weights(&self, classes: usize) -> Vec<f64> {
        let mut w = vec![self.lane_class_weight; classes];
        w[0] = self.background_class_weight;
        w
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub ce_part: f64,
    pub exist_part: f64,
}

/// A scalar loss with its gradient with respect to the scored tensor.
#[derive(Clone, Debug)]
pub struct Scored<T> {
    pub value: f64,
    pub grad: Tensor<T>,
}

pub struct LossWithGrads<T> {
    pub value: LossValue,
    pub d_seg_logits: Tensor<T>,
    pub d_exist_probs: Tensor<T>,
}

/// Mean binary cross-entropy over every element, probabilities clamped to
/// `[clamp, 1 − clamp]`. The gradient is zero where the clamp is active.
pub fn bce_exist<T: Real>(probs: &Tensor<T>, labels: &Tensor<T>, clamp: f64) -> Result<Scored<T>> {
    const OP: &str = "bce_exist";
    probs.expect_same_shape(OP, labels)?;
    if probs.is_empty() {
        return Err(Error::shape(OP, "empty input"));
    }
    let n = probs.len() as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(probs.len());
    for (i, (&x, &y)) in probs.data().iter().zip(labels.data()).enumerate() {
        let (x, y) = (x.as_f64(), y.as_f64());
        if y != 0.0 && y != 1.0 {
            return Err(Error::Label(format!("existence label {y} at index {i} is not 0 or 1")));
        }
        if !x.is_finite() {
            return Err(Error::NonFinite { op: OP, index: i });
        }
        let xc = x.clamp(clamp, 1.0 - clamp);
        total -= y * xc.ln() + (1.0 - y) * (1.0 - xc).ln();
        let g = if xc != x { 0.0 } else { (-y / xc + (1.0 - y) / (1.0 - xc)) / n };
        grad.push(T::from_f64_lossy(g));
    }
    Ok(Scored {
        value: total / n,
        grad: Tensor::from_vec(probs.shape(), grad)?,
    })
}

/// Softmax cross-entropy per pixel, weighted by the pixel's true-class weight
/// and normalized by the sum of those weights.
pub fn weighted_ce_seg<T: Real>(logits: &Tensor<T>, labels: &[u8], class_weights: &[f64]) -> Result<Scored<T>> {
    const OP: &str = "weighted_ce_seg";
    let (n, c, h, w) = logits.dims4(OP)?;
    if class_weights.len() != c {
        return Err(Error::shape(OP, format!("{} class weights for {c} classes", class_weights.len())));
    }
    if labels.len() != n * h * w {
        return Err(Error::shape(
            OP,
            format!("label mask has {} pixels, logits have {n}x{h}x{w}", labels.len()),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= c) {
        return Err(Error::Label(format!("class id {bad} out of range 0..{c}")));
    }
    let probs = numerics::channel_softmax_forward(logits)?;
    let plane = h * w;
    let norm: f64 = labels.iter().map(|&l| class_weights[l as usize]).sum();
    let mut total = 0.0;
    let mut grad = probs.clone();
    let p = probs.data();
    let g = grad.data_mut();
    for b in 0..n {
        for px in 0..plane {
            let label = labels[b * plane + px] as usize;
            let wt = class_weights[label];
            let idx = |k: usize| (b * c + k) * plane + px;
            total -= wt * p[idx(label)].as_f64().max(f64::MIN_POSITIVE).ln();
            let s = T::from_f64_lossy(wt / norm);
            for k in 0..c {
                g[idx(k)] *= s;
            }
            g[idx(label)] -= s;
        }
    }
    Ok(Scored {
        value: total / norm,
        grad,
    })
}

/// Combined objective `ce + exist_weight · exist` and its gradients for
/// both heads. `labels` is `N × H × W` class ids, `exist` is `N × lanes`.
pub fn total_loss<T: Real>(
    output: &ModelOutput<T>,
    labels: &[u8],
    exist: &Tensor<T>,
    config: &LossConfig,
) -> Result<LossWithGrads<T>> {
    config.validate()?;
    let classes = output.seg_logits.shape().get(1).copied().unwrap_or(0);
    if classes == 0 {
        return Err(Error::shape("total_loss", "segmentation logits must be N×C×H×W"));
    }
    let ce = weighted_ce_seg(&output.seg_logits, labels, &config.class_weights(classes))?;
    let ex = bce_exist(&output.exist_probs, exist, config.probability_clamp)?;
    let k = T::from_f64_lossy(config.exist_weight);
    Ok(LossWithGrads {
        value: LossValue {
            total: ce.value + config.exist_weight * ex.value,
            ce_part: ce.value,
            exist_part: ex.value,
        },
        d_seg_logits: ce.grad,
        d_exist_probs: ex.grad.map(|g| g * k),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_probabilities_give_ln2() {
        let x = Tensor::<f64>::full(&[3, 4], 0.5);
        let y = Tensor::from_fn(&[3, 4], |i| (i % 2) as f64);
        let s = bce_exist(&x, &y, 1e-7).unwrap();
        assert!((s.value - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn saturated_prediction_is_finite() {
        let x = Tensor::<f64>::full(&[1, 1], 1.0);
        let y = Tensor::full(&[1, 1], 1.0);
        let s = bce_exist(&x, &y, 1e-7).unwrap();
        assert!((s.value - 1e-7).abs() < 1e-12, "{}", s.value);
        assert_eq!(s.grad.data()[0], 0.0);
    }

    #[test]
    fn non_binary_labels_rejected() {
        let x = Tensor::<f64>::full(&[1, 4], 0.5);
        let y = Tensor::full(&[1, 4], 0.5);
        assert!(matches!(bce_exist(&x, &y, 1e-7), Err(Error::Label(_))));
    }

    #[test]
    fn uniform_logits_give_ln5() {
        let logits = Tensor::<f64>::full(&[2, 5, 3, 4], 0.7);
        let labels: Vec<u8> = (0..24).map(|i| (i % 5) as u8).collect();
        let s = weighted_ce_seg(&logits, &labels, &LossConfig::default().class_weights(5)).unwrap();
        assert!((s.value - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_class_rejected() {
        let logits = Tensor::<f64>::zeros(&[1, 5, 1, 2]);
        assert!(weighted_ce_seg(&logits, &[0, 5], &[1.0; 5]).is_err());
    }
}
