//! Deterministic SGD-with-momentum training, checkpoints and the loss log.

pub mod gradcheck;
pub mod scopes;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::blocks::apply_bn_updates;
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::fsio;
use crate::loss::{total_loss, LossConfig, LossValue};
use crate::network::{save_weights, LaneNet, ModelConfig};
use crate::numerics::Mode;
use crate::params::{Gradients, ModelParams, ParamKind};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LrSchedule {
    Constant,
    /// `lr · (1 − t/T)^power`.
    Poly { power: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub lr_schedule: LrSchedule,
    /// Stops early once this many steps have run.
    pub max_steps: Option<usize>,
    /// Random horizontal flips (lane classes re-ordered to match).
    pub flip: bool,
    /// Write a checkpoint every this many epochs (the final one always).
    pub checkpoint_every: usize,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 8,
            epochs: 1,
            seed: 0,
            lr_schedule: LrSchedule::Constant,
            max_steps: None,
            flip: false,
            checkpoint_every: 1,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        // lr = 0 is allowed: it is the fixed point used to test the loop
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr {} must be finite and >= 0", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!("weight_decay {} must be >= 0", self.weight_decay)));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.checkpoint_every == 0 {
            return Err(Error::Config("batch_size, epochs and checkpoint_every must be >= 1".into()));
        }
        if let LrSchedule::Poly { power } = self.lr_schedule {
            if !(power > 0.0) {
                return Err(Error::Config(format!("poly power {power} must be > 0")));
            }
        }
        self.loss.validate()
    }

    pub fn steps_per_epoch(&self, samples: usize) -> usize {
        samples.div_ceil(self.batch_size)
    }

    pub fn total_steps(&self, samples: usize) -> usize {
        let t = self.epochs * self.steps_per_epoch(samples);
        self.max_steps.map_or(t, |m| m.min(t))
    }

    /// Learning rate for 0-based step `t` of `total`.
    pub fn lr_at(&self, t: usize, total: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::Poly { power } => self.lr * (1.0 - t as f64 / total.max(1) as f64).max(0.0).powf(power),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainLogEntry {
    pub step: usize,
    pub epoch: usize,
    pub total: f64,
    pub ce: f64,
    pub exist: f64,
    pub lr: f64,
}

impl TrainLogEntry {
    pub const HEADER: &'static str = "step\tepoch\ttotal\tce\texist\tlr";

    pub fn to_tsv(&self) -> String {
        format!(
            "{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:e}",
            self.step, self.epoch, self.total, self.ce, self.exist, self.lr
        )
    }
}

pub fn format_log(entries: &[TrainLogEntry]) -> String {
    let mut s = String::from(TrainLogEntry::HEADER);
    s.push('\n');
    for e in entries {
        let _ = writeln!(s, "{}", e.to_tsv());
    }
    s
}

/// Momentum SGD with classic L2 weight decay on
/// trainable entries: `v ← μv + g + λp`, `p ← p − lr·v`. Buffers are left
/// alone.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Option<Tensor<f32>>>,
}

impl Sgd {
    pub fn new(params: &ModelParams<f32>, momentum: f64, weight_decay: f64) -> Self {
        let velocity = params
            .entries()
            .iter()
            .map(|p| (p.kind == ParamKind::Weight).then(|| Tensor::zeros(p.tensor.shape())))
            .collect();
        Sgd {
            momentum,
            weight_decay,
            velocity,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams<f32>, grads: &Gradients<f32>, lr: f64) -> Result<()> {
        if grads.tensors().len() != self.velocity.len() {
            return Err(Error::shape("Sgd::step", "gradients do not match the parameter set"));
        }
        let (mu, wd, lr) = (self.momentum as f32, self.weight_decay as f32, lr as f32);
        for ((entry, v), g) in params.entries_mut().iter_mut().zip(&mut self.velocity).zip(grads.tensors()) {
            let Some(v) = v else { continue };
            entry.tensor.expect_same_shape("Sgd::step", g)?;
            for ((p, v), &g) in entry.tensor.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                *v = mu * *v + g + wd * *p;
                *p -= lr * *v;
            }
        }
        Ok(())
    }
}

/// A stacked mini-batch ready for the network and the loss.
#[derive(Clone, Debug)]
pub struct Batch {
    pub input: Tensor<f32>,
    pub labels: Vec<u8>,
    pub exist: Tensor<f32>,
}

impl Batch {
    pub fn new(samples: &[&Sample]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::shape("Batch::new", "empty batch"))?;
        let lanes = first.exist.len();
        let images: Vec<&Tensor<f32>> = samples.iter().map(|s| &s.image).collect();
        let input = Tensor::stack(&images)?;
        let mut labels = Vec::with_capacity(samples.len() * first.label_mask.len());
        let mut exist = Vec::with_capacity(samples.len() * lanes);
        for s in samples {
            if s.exist.len() != lanes {
                return Err(Error::shape("Batch::new", "samples disagree on the lane count"));
            }
            labels.extend_from_slice(&s.label_mask);
            exist.extend(s.exist.iter().map(|&e| e as f32));
        }
        Ok(Batch {
            input,
            labels,
            exist: Tensor::from_vec(&[samples.len(), lanes], exist)?,
        })
    }
}

/// Sample order for one epoch: a permutation fixed by `(seed, epoch)`.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Everything a checkpoint's sidecar records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub step: usize,
    pub epoch: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

/// `<weights>.toml`.
pub fn sidecar_path(weights: &Path) -> PathBuf {
    let mut s = weights.as_os_str().to_owned();
    s.push(".toml");
    PathBuf::from(s)
}

pub fn save_checkpoint(path: &Path, params: &ModelParams<f32>, meta: &CheckpointMeta) -> Result<()> {
    let text = toml::to_string(meta).map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
    save_weights(params, path)?;
    fsio::write_atomic(&sidecar_path(path), text.as_bytes())
}

pub fn read_checkpoint_meta(weights: &Path) -> Result<CheckpointMeta> {
    let path = sidecar_path(weights);
    let text = fsio::read_to_string(&path)?;
    toml::from_str(&text).map_err(|e| Error::format(path.display().to_string(), e.to_string()))
}

/// Where the loop writes, and an optional per-step callback.
#[derive(Default)]
pub struct TrainOptions<'a> {
    pub checkpoint: Option<PathBuf>,
    pub log: Option<PathBuf>,
    pub on_step: Option<&'a mut dyn FnMut(&TrainLogEntry)>,
}

pub struct TrainOutput {
    pub params: ModelParams<f32>,
    pub log: Vec<TrainLogEntry>,
}

/// Builds the network from `model` (initialized from `model.seed`) and
/// trains it.
pub fn train(
    model: &ModelConfig,
    samples: &[Sample],
    config: &TrainConfig,
    options: TrainOptions<'_>,
) -> Result<(LaneNet, TrainOutput)> {
    let (net, params) = LaneNet::build::<f32>(model)?;
    let out = train_from(&net, params, samples, config, options)?;
    Ok((net, out))
}

/// Trains existing parameters. A non-finite loss aborts with
/// [`Error::Diverged`]; the log (including the offending step) is written
/// first.
pub fn train_from(
    net: &LaneNet,
    mut params: ModelParams<f32>,
    samples: &[Sample],
    config: &TrainConfig,
    mut options: TrainOptions<'_>,
) -> Result<TrainOutput> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::Config("no training samples".into()));
    }
    let model = &net.config;
    for (i, s) in samples.iter().enumerate() {
        if (s.height(), s.width()) != (model.input_h, model.input_w) || s.exist.len() != model.num_lanes {
            return Err(Error::shape(
                "train",
                format!(
                    "sample {i} is {}x{} with {} lanes, model expects {}x{} with {}",
                    s.height(),
                    s.width(),
                    s.exist.len(),
                    model.input_h,
                    model.input_w,
                    model.num_lanes
                ),
            ));
        }
    }
    let total = config.total_steps(samples.len());
    let mut sgd = Sgd::new(&params, config.momentum, config.weight_decay);
    let mut aug = ChaCha8Rng::seed_from_u64(config.seed);
    aug.set_stream(0);
    let mut log = Vec::with_capacity(total);
    let mut step = 0;
    let write_log = |log: &[TrainLogEntry], path: &Option<PathBuf>| match path {
        Some(p) => fsio::write_atomic(p, format_log(log).as_bytes()),
        None => Ok(()),
    };

    for epoch in 0..config.epochs {
        let order = epoch_order(config.seed, epoch, samples.len());
        for chunk in order.chunks(config.batch_size) {
            if step == total {
                // a step budget can end mid-epoch; still checkpoint below
                break;
            }
            let flipped: Vec<Sample>;
            let batch: Vec<&Sample> = if config.flip {
                flipped = chunk
                    .iter()
                    .map(|&i| if aug.random::<bool>() { samples[i].flipped() } else { samples[i].clone() })
                    .collect();
                flipped.iter().collect()
            } else {
                chunk.iter().map(|&i| &samples[i]).collect()
            };
            let batch = Batch::new(&batch)?;
            let lr = config.lr_at(step, total);
            let dropout_seed = config.seed ^ (step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            let fwd = match net.forward_seeded(&params, &batch.input, Mode::Train, dropout_seed) {
                Ok(f) => f,
                Err(Error::NonFinite { .. }) => {
                    return diverged(step, epoch, lr, f64::NAN, &mut log, &options.log);
                }
                Err(e) => return Err(e),
            };
            let lg = match total_loss(&fwd.output, &batch.labels, &batch.exist, &config.loss) {
                Ok(l) => l,
                Err(Error::NonFinite { .. }) => {
                    return diverged(step, epoch, lr, f64::NAN, &mut log, &options.log);
                }
                Err(e) => return Err(e),
            };
            if !lg.value.total.is_finite() {
                return diverged(step, epoch, lr, lg.value.total, &mut log, &options.log);
            }
            let grads = net.backward(&params, &fwd, &lg.d_seg_logits, &lg.d_exist_probs)?;
            sgd.step(&mut params, &grads, lr)?;
            apply_bn_updates(&mut params, &fwd.bn_updates);
            let entry = entry(step, epoch, lr, lg.value);
            if let Some(cb) = options.on_step.as_mut() {
                cb(&entry);
            }
            log.push(entry);
            step += 1;
        }
        let last = step == total || epoch + 1 == config.epochs;
        if let Some(path) = &options.checkpoint {
            if last || (epoch + 1) % config.checkpoint_every == 0 {
                let meta = CheckpointMeta {
                    step,
                    epoch: epoch + 1,
                    model: model.clone(),
                    train: config.clone(),
                };
                save_checkpoint(path, &params, &meta)?;
                write_log(&log, &options.log)?;
            }
        }
        if last {
            break;
        }
    }
    write_log(&log, &options.log)?;
    Ok(TrainOutput { params, log })
}

fn entry(step: usize, epoch: usize, lr: f64, v: LossValue) -> TrainLogEntry {
    TrainLogEntry {
        step,
        epoch,
        total: v.total,
        ce: v.ce_part,
        exist: v.exist_part,
        lr,
    }
}

fn diverged(
    step: usize,
    epoch: usize,
    lr: f64,
    loss: f64,
    log: &mut Vec<TrainLogEntry>,
    path: &Option<PathBuf>,
) -> Result<TrainOutput> {
    log.push(TrainLogEntry {
        step,
        epoch,
        total: loss,
        ce: f64::NAN,
        exist: f64::NAN,
        lr,
    });
    if let Some(p) = path {
        fsio::write_atomic(p, format_log(log).as_bytes())?;
    }
    Err(Error::Diverged { step, loss })
}

/// Loss of `samples` under `mode`, averaged over batches of `batch_size`
/// weighted by batch length. Infer mode uses the running statistics.
pub fn evaluate_loss(
    net: &LaneNet,
    params: &ModelParams<f32>,
    samples: &[Sample],
    loss: &LossConfig,
    mode: Mode,
    batch_size: usize,
) -> Result<LossValue> {
    let mut acc = LossValue {
        total: 0.0,
        ce_part: 0.0,
        exist_part: 0.0,
    };
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let batch = Batch::new(&refs)?;
        let out = net.forward(params, &batch.input, mode)?.into_output();
        let v = total_loss(&out, &batch.labels, &batch.exist, loss)?.value;
        let k = chunk.len() as f64 / samples.len() as f64;
        acc.total += k * v.total;
        acc.ce_part += k * v.ce_part;
        acc.exist_part += k * v.exist_part;
    }
    Ok(acc)
}

/// Images whose four existence decisions (probability ≥ 0.5) all match the
/// labels, out of the total.
pub fn existence_accuracy(
    net: &LaneNet,
    params: &ModelParams<f32>,
    samples: &[Sample],
    mode: Mode,
) -> Result<(usize, usize)> {
    let mut correct = 0;
    for chunk in samples.chunks(8) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let batch = Batch::new(&refs)?;
        let out = net.forward(params, &batch.input, mode)?.into_output();
        let lanes = batch.exist.shape()[1];
        for (probs, labels) in out.exist_probs.data().chunks(lanes).zip(batch.exist.data().chunks(lanes)) {
            correct += probs.iter().zip(labels).all(|(&p, &y)| (p >= 0.5) == (y >= 0.5)) as usize;
        }
    }
    Ok((correct, samples.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poly_schedule_endpoints() {
        let cfg = TrainConfig {
            lr_schedule: LrSchedule::Poly { power: 0.9 },
            ..Default::default()
        };
        assert_eq!(cfg.lr_at(0, 100), 0.01);
        assert!((cfg.lr_at(50, 100) - 0.01 * 0.5f64.powf(0.9)).abs() < 1e-15);
        assert_eq!(cfg.lr_at(100, 100), 0.0);
    }

    #[test]
    fn plain_sgd_step_is_exact() {
        let mut b = crate::params::ParamBuilder::<f32>::new(3);
        let id = b.normal("w".into(), &[5], 1.0);
        b.buffer("running".into(), &[2], 1.0);
        let mut p = b.finish();
        let before = p.clone();
        let mut g = p.zero_grads();
        g.accumulate(id, &Tensor::from_vec(&[5], vec![0.5, -1.0, 2.0, 0.0, 3.0]).unwrap())
            .unwrap();
        Sgd::new(&p, 0.0, 0.0).step(&mut p, &g, 0.1).unwrap();
        for i in 0..5 {
            let want = before.get(id).data()[i] - 0.1f32 * g.get(id).data()[i];
            assert_eq!(p.get(id).data()[i].to_bits(), want.to_bits());
        }
        assert_eq!(p.entries()[1], before.entries()[1]);
    }

    #[test]
    fn epoch_order_is_a_seeded_permutation() {
        let a = epoch_order(5, 0, 10);
        let mut s = a.clone();
        s.sort();
        assert_eq!(s, (0..10).collect::<Vec<_>>());
        assert_eq!(a, epoch_order(5, 0, 10));
        assert_ne!(a, epoch_order(5, 1, 10));
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = TrainConfig {
            lr_schedule: LrSchedule::Poly { power: 0.9 },
            max_steps: Some(7),
            ..Default::default()
        };
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(toml::from_str::<TrainConfig>(&text).unwrap(), cfg);
    }
}
