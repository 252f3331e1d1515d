//! The catalog of gradient checks: every primitive layer on three shapes,
//! every composite block, the miniature model, and the loss terms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::blocks::spatial::{spatial_backward, spatial_forward, Direction, SpatialConv};
use crate::blocks::{Ctx, Downsampler, FeatureMerge, InfoExchange, NonBottleneck1d, DEFAULT_LAYOUT};
use crate::error::{Error, Result};
use crate::loss::{bce_exist, total_loss, weighted_ce_seg, LossConfig};
use crate::network::{LaneNet, ModelConfig, ModelOutput};
use crate::numerics::{self, ConvSpec, ConvTransposeSpec, Mode};
use crate::params::{Gradients, ModelParams, ParamBuilder, ParamKind};
use crate::tensor::Tensor;
use crate::train::gradcheck::{check, normal_tensor, GradcheckConfig, Problem, ScopeReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Group {
    Layer,
    Block,
    Model,
    Loss,
    Linear,
}

impl Group {
    pub fn name(self) -> &'static str {
        match self {
            Group::Layer => "layers",
            Group::Block => "blocks",
            Group::Model => "model",
            Group::Loss => "loss",
            Group::Linear => "linear",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Scope {
    pub name: String,
    pub group: Group,
    build: Builder,
}

#[derive(Clone, Debug)]
enum Builder {
    Conv(usize),
    ConvTranspose(usize),
    MaxPool(usize),
    BatchNorm(usize),
    Relu(usize),
    Sigmoid(usize),
    Softmax(usize),
    FullyConnected(usize),
    Spatial(Direction, usize),
    Downsampler,
    NonBt1d(usize),
    FeatureMerge,
    SpatialBlock(Direction),
    InfoExchange,
    Model,
    Bce,
    WeightedCe,
    TotalLoss,
    LinearChain,
}

impl Scope {
    pub fn build(&self, seed: u64) -> Result<Problem> {
        let rng = &mut ChaCha8Rng::seed_from_u64(seed);
        let name = self.name.clone();
        match self.build {
            Builder::Conv(v) => conv_problem(name, rng, v),
            Builder::ConvTranspose(v) => tconv_problem(name, rng, v),
            Builder::MaxPool(v) => maxpool_problem(name, rng, v),
            Builder::BatchNorm(v) => bn_problem(name, rng, v),
            Builder::Relu(v) => pointwise_problem(name, rng, v, Pointwise::Relu),
            Builder::Sigmoid(v) => pointwise_problem(name, rng, v, Pointwise::Sigmoid),
            Builder::Softmax(v) => pointwise_problem(name, rng, v, Pointwise::Softmax),
            Builder::FullyConnected(v) => fc_problem(name, rng, v),
            Builder::Spatial(dir, v) => spatial_problem(name, rng, dir, v),
            Builder::Downsampler => downsampler_problem(name, rng, seed),
            Builder::NonBt1d(d) => nonbt_problem(name, rng, seed, d),
            Builder::FeatureMerge => merge_problem(name, rng, seed),
            Builder::SpatialBlock(dir) => spatial_block_problem(name, rng, seed, dir),
            Builder::InfoExchange => exchange_problem(name, rng, seed),
            Builder::Model => model_problem(name, rng, seed),
            Builder::Bce => bce_problem(name, rng),
            Builder::WeightedCe => ce_problem(name, rng),
            Builder::TotalLoss => total_loss_problem(name, rng),
            Builder::LinearChain => linear_chain_problem(name, rng),
        }
    }

    pub fn run(&self, config: &GradcheckConfig) -> Result<ScopeReport> {
        check(&self.build(config.seed)?, config)
    }
}

pub fn catalog() -> Vec<Scope> {
    let mut v = Vec::new();
    let mut add = |name: String, group, build| v.push(Scope { name, group, build });
    for i in 0..3 {
        add(format!("layer.conv2d.{i}"), Group::Layer, Builder::Conv(i));
        add(format!("layer.transposed_conv2d.{i}"), Group::Layer, Builder::ConvTranspose(i));
        add(format!("layer.maxpool2x2.{i}"), Group::Layer, Builder::MaxPool(i));
        add(format!("layer.batchnorm2d.{i}"), Group::Layer, Builder::BatchNorm(i));
        add(format!("layer.relu.{i}"), Group::Layer, Builder::Relu(i));
        add(format!("layer.sigmoid.{i}"), Group::Layer, Builder::Sigmoid(i));
        add(format!("layer.channel_softmax.{i}"), Group::Layer, Builder::Softmax(i));
        add(format!("layer.fully_connected.{i}"), Group::Layer, Builder::FullyConnected(i));
        add(format!("layer.spatial_down.{i}"), Group::Layer, Builder::Spatial(Direction::Down, i));
        add(format!("layer.spatial_up.{i}"), Group::Layer, Builder::Spatial(Direction::Up, i));
    }
    add("block.downsampler".into(), Group::Block, Builder::Downsampler);
    for d in [1, 2, 4] {
        add(format!("block.nonbt1d.d{d}"), Group::Block, Builder::NonBt1d(d));
    }
    add("block.feature_merge".into(), Group::Block, Builder::FeatureMerge);
    add("block.spatial.down".into(), Group::Block, Builder::SpatialBlock(Direction::Down));
    add("block.spatial.up".into(), Group::Block, Builder::SpatialBlock(Direction::Up));
    add("block.info_exchange".into(), Group::Block, Builder::InfoExchange);
    add("model.miniature".into(), Group::Model, Builder::Model);
    add("loss.bce_exist".into(), Group::Loss, Builder::Bce);
    add("loss.weighted_ce_seg".into(), Group::Loss, Builder::WeightedCe);
    add("loss.total".into(), Group::Loss, Builder::TotalLoss);
    add("linear.chain".into(), Group::Linear, Builder::LinearChain);
    v
}

/// `all`, a group name (`layers`, `blocks`, `model`, `loss`, `linear`), or
/// a scope name or dotted prefix of one (`layer.conv2d`, `block.nonbt1d.d2`).
pub fn select(filter: &str) -> Result<Vec<Scope>> {
    let all = catalog();
    let picked: Vec<Scope> = match filter {
        "all" => all,
        f => all
            .into_iter()
            .filter(|s| s.group.name() == f || s.name == f || s.name.starts_with(&format!("{f}.")))
            .collect(),
    };
    if picked.is_empty() {
        return Err(Error::Config(format!("unknown gradcheck scope `{filter}`")));
    }
    Ok(picked)
}

pub fn run_gradcheck(filter: &str, config: &GradcheckConfig) -> Result<Vec<ScopeReport>> {
    select(filter)?.iter().map(|s| s.run(config)).collect()
}

type Rng64 = ChaCha8Rng;

fn probe_dot(out: &Tensor<f64>, probe: &Tensor<f64>) -> Result<f64> {
    out.dot(probe)
}

fn conv_problem(name: String, rng: &mut Rng64, variant: usize) -> Result<Problem> {
    let (input_shape, spec) = match variant {
        0 => ([2, 3, 6, 5], ConvSpec::new(3, 4, (3, 3)).pad(1, 1)),
        1 => ([1, 2, 7, 8], ConvSpec::new(2, 3, (3, 1)).dilation(2, 1).pad(2, 0)),
        _ => ([2, 2, 5, 9], ConvSpec::new(2, 2, (1, 3)).dilation(1, 4).pad(0, 4).stride(1, 2)),
    };
    let x = normal_tensor(rng, &input_shape, 1.0);
    let w = normal_tensor(rng, &spec.weight_shape(), 0.5);
    let b = normal_tensor(rng, &[spec.out_channels], 0.5);
    let out_shape = numerics::conv2d_forward(&x, &w, Some(&b), &spec)?.shape().to_vec();
    let probe = normal_tensor(rng, &out_shape, 1.0);
    let (s1, s2, p) = (spec.clone(), spec, probe.clone());
    Ok(Problem::new(
        name,
        vec![("input".into(), x), ("weight".into(), w), ("bias".into(), b)],
        move |t| probe_dot(&numerics::conv2d_forward(&t[0], &t[1], Some(&t[2]), &s1)?, &probe),
        move |t| {
            let g = numerics::conv2d_backward(&t[0], &t[1], &s2, &p)?;
            Ok(vec![g.d_input, g.d_weights[0].clone(), g.d_weights[1].clone()])
        },
    ))
}

fn tconv_problem(name: String, rng: &mut Rng64, variant: usize) -> Result<Problem> {
    let (input_shape, spec) = match variant {
        0 => ([1, 3, 3, 4], ConvTransposeSpec::upsample2x(3, 2)),
        1 => ([2, 2, 2, 3], ConvTransposeSpec::upsample2x(2, 5)),
        _ => (
            [1, 2, 3, 3],
            ConvTransposeSpec {
                conv: ConvSpec::new(2, 3, (2, 2)).stride(2, 2),
                output_pad_h: 0,
                output_pad_w: 1,
            },
        ),
    };
    let x = normal_tensor(rng, &input_shape, 1.0);
    let w = normal_tensor(rng, &spec.weight_shape(), 0.5);
    let b = normal_tensor(rng, &[spec.conv.out_channels], 0.5);
    let out_shape = numerics::transposed_conv2d_forward(&x, &w, Some(&b), &spec)?.shape().to_vec();
    let probe = normal_tensor(rng, &out_shape, 1.0);
    let (s1, s2, p) = (spec.clone(), spec, probe.clone());
    Ok(Problem::new(
        name,
        vec![("input".into(), x), ("weight".into(), w), ("bias".into(), b)],
        move |t| probe_dot(&numerics::transposed_conv2d_forward(&t[0], &t[1], Some(&t[2]), &s1)?, &probe),
        move |t| {
            let g = numerics::transposed_conv2d_backward(&t[0], &t[1], &s2, &p)?;
            Ok(vec![g.d_input, g.d_weights[0].clone(), g.d_weights[1].clone()])
        },
    ))
}

fn maxpool_problem(name: String, rng: &mut Rng64, variant: usize) -> Result<Problem> {
    let shape = [[2, 3, 4, 6], [1, 2, 6, 2], [3, 1, 2, 8]][variant.min(2)];
    let x = normal_tensor(rng, &shape, 1.0);
    let probe = normal_tensor(rng, &[shape[0], shape[1], shape[2] / 2, shape[3] / 2], 1.0);
    let p = probe.clone();
    Ok(Problem::new(
        name,
        vec![("input".into(), x)],
        move |t| probe_dot(&numerics::maxpool2x2_forward(&t[0])?.0, &probe),
        move |t| {
            let (_, idx) = numerics::maxpool2x2_forward(&t[0])?;
            Ok(vec![numerics::maxpool2x2_backward(&idx, &p)?])
        },
    ))
}

fn bn_problem(name: String, rng: &mut Rng64, variant: usize) -> Result<Problem> {
    let shape = [[2, 3, 4, 5], [4, 2, 1, 3], [1, 4, 3, 3]][variant.min(2)];
    let c = shape[1];
    let x = normal_tensor(rng, &shape, 2.0).map(|v| v + 0.5);
    let gamma = normal_tensor(rng, &[c], 1.0);
    let beta = normal_tensor(rng, &[c], 1.0);
    let probe = normal_tensor(rng, &shape, 1.0);
    let p = probe.clone();
    let fwd = move |t: &[Tensor<f64>]| {
        numerics::batchnorm2d_forward(&t[0], &t[1], &t[2], &Tensor::zeros(&[c]), &Tensor::full(&[c], 1.0), Mode::Train)
    };
    Ok(Problem::new(
        name,
        vec![("input".into(), x), ("gamma".into(), gamma), ("beta".into(), beta)],
        move |t| probe_dot(&fwd(t)?.0, &probe),
        move |t| {
            let (_, cache) = fwd(t)?;
            let g = numerics::batchnorm2d_backward(&cache, &t[1], &p)?;
            Ok(vec![g.d_input, g.d_weights[0].clone(), g.d_weights[1].clone()])
        },
    ))
}

#[derive(Clone, Copy)]
enum Pointwise {
    Relu,
    Sigmoid,
    Softmax,
}

fn pointwise_problem(name: String, rng: &mut Rng64, variant: usize, op: Pointwise) -> Result<Problem> {
    let shape = match op {
        Pointwise::Softmax => [[2, 5, 3, 4], [1, 3, 2, 2], [3, 2, 1, 5]][variant.min(2)],
        _ => [[2, 3, 4, 4], [1, 1, 5, 7], [4, 2, 3, 1]][variant.min(2)],
    };
    let x = normal_tensor(rng, &shape, 2.0);
    let probe = normal_tensor(rng, &shape, 1.0);
    let p = probe.clone();
    let fwd = move |x: &Tensor<f64>| match op {
        Pointwise::Relu => numerics::relu_forward(x),
        Pointwise::Sigmoid => numerics::sigmoid_forward(x),
        Pointwise::Softmax => numerics::channel_softmax_forward(x),
    };
    Ok(Problem::new(
        name,
        vec![("input".into(), x)],
        move |t| probe_dot(&fwd(&t[0])?, &probe),
        move |t| {
            Ok(vec![match op {
                Pointwise::Relu => numerics::relu_backward(&t[0], &p)?,
                Pointwise::Sigmoid => numerics::sigmoid_backward(&fwd(&t[0])?, &p)?,
                Pointwise::Softmax => numerics::channel_softmax_backward(&fwd(&t[0])?, &p)?,
            }])
        },
    ))
}

fn fc_problem(name: String, rng: &mut Rng64, variant: usize) -> Result<Problem> {
    let (n, f, g) = [(3, 7, 5), (1, 12, 4), (5, 2, 9)][variant.min(2)];
    let x = normal_tensor(rng, &[n, f], 1.0);
    let w = normal_tensor(rng, &[f, g], 0.5);
    let b = normal_tensor(rng, &[g], 0.5);
    let probe = normal_tensor(rng, &[n, g], 1.0);
    let p = probe.clone();
    Ok(Problem::new(
        name,
        vec![("input".into(), x), ("weight".into(), w), ("bias".into(), b)],
        move |t| probe_dot(&numerics::fully_connected_forward(&t[0], &t[1], &t[2])?, &probe),
        move |t| {
            let gr = numerics::fully_connected_backward(&t[0], &t[1], &p)?;
            Ok(vec![gr.d_input, gr.d_weights[0].clone(), gr.d_weights[1].clone()])
        },
    ))
}

fn spatial_problem(name: String, rng: &mut Rng64, dir: Direction, variant: usize) -> Result<Problem> {
    let (shape, taps) = [([2, 4, 6, 8], 9), ([1, 3, 5, 4], 3), ([2, 2, 4, 3], 1)][variant.min(2)];
    let c = shape[1];
    let x = normal_tensor(rng, &shape, 1.0);
    let k = normal_tensor(rng, &[c, c, taps], 0.4);
    let probe = normal_tensor(rng, &shape, 1.0);
    let p = probe.clone();
    Ok(Problem::new(
        name,
        vec![("input".into(), x), ("kernel".into(), k)],
        move |t| probe_dot(&spatial_forward(&t[0], &t[1], dir)?.output, &probe),
        move |t| {
            let cache = spatial_forward(&t[0], &t[1], dir)?;
            let g = spatial_backward(&cache, &t[1], dir, &p)?;
            Ok(vec![g.d_input, g.d_weights[0].clone()])
        },
    ))
}

/// Splits checked tensors into block inputs and a full parameter set
/// (buffers taken from the template).
struct ParamLayout {
    template: ModelParams<f64>,
    weights: Vec<usize>,
    inputs: usize,
}

impl ParamLayout {
    fn new(template: ModelParams<f64>, inputs: usize) -> Self {
        let weights = template
            .entries()
            .iter()
            .enumerate()
            .filter(|(_, p)| p.kind == ParamKind::Weight)
            .map(|(i, _)| i)
            .collect();
        ParamLayout {
            template,
            weights,
            inputs,
        }
    }

    fn named(&self, inputs: Vec<(String, Tensor<f64>)>) -> Vec<(String, Tensor<f64>)> {
        let mut v = inputs;
        for &i in &self.weights {
            let p = &self.template.entries()[i];
            v.push((p.name.clone(), p.tensor.clone()));
        }
        v
    }

    fn params(&self, t: &[Tensor<f64>]) -> Result<ModelParams<f64>> {
        let mut all: Vec<Tensor<f64>> = self.template.entries().iter().map(|p| p.tensor.clone()).collect();
        for (k, &i) in self.weights.iter().enumerate() {
            all[i] = t[self.inputs + k].clone();
        }
        self.template.with_tensors(all)
    }

    fn grads(&self, d_inputs: Vec<Tensor<f64>>, g: Gradients<f64>) -> Vec<Tensor<f64>> {
        let all = g.into_tensors();
        let mut v = d_inputs;
        v.extend(self.weights.iter().map(|&i| all[i].clone()));
        v
    }
}

/// Randomizes batch-norm affine parameters so the check does not sit on
/// the special point `gamma = 1, beta = 0`.
fn jitter_affine(params: &mut ModelParams<f64>, rng: &mut Rng64) {
    for p in params.entries_mut() {
        if p.name.ends_with(".gamma") || p.name.ends_with(".beta") || p.name.ends_with(".bias") {
            let base = if p.name.ends_with(".gamma") { 1.0 } else { 0.0 };
            for v in p.tensor.data_mut() {
                *v = base + 0.3 * (rng.random::<f64>() - 0.5);
            }
        }
    }
}

fn single_input_block<B, C>(
    name: String,
    rng: &mut Rng64,
    builder: ParamBuilder<f64>,
    block: B,
    input_shape: &[usize],
    forward: fn(&B, &ModelParams<f64>, &Tensor<f64>, &mut Ctx<f64>) -> Result<(Tensor<f64>, C)>,
    backward: fn(&B, &ModelParams<f64>, &C, &Tensor<f64>, &mut Gradients<f64>) -> Result<Tensor<f64>>,
) -> Result<Problem>
where
    B: Send + Sync + Clone + 'static,
    C: 'static,
{
    let mut params = builder.finish();
    jitter_affine(&mut params, rng);
    let x = normal_tensor(rng, input_shape, 1.0);
    let out_shape = forward(&block, &params, &x, &mut Ctx::new(Mode::Train))?.0.shape().to_vec();
    let probe = normal_tensor(rng, &out_shape, 1.0);
    let layout = std::sync::Arc::new(ParamLayout::new(params, 1));
    let named = layout.named(vec![("input".into(), x)]);
    let (l1, l2, b1, b2, p) = (layout.clone(), layout, block.clone(), block, probe.clone());
    Ok(Problem::new(
        name,
        named,
        move |t| {
            let params = l1.params(t)?;
            probe_dot(&forward(&b1, &params, &t[0], &mut Ctx::new(Mode::Train))?.0, &probe)
        },
        move |t| {
            let params = l2.params(t)?;
            let (_, cache) = forward(&b2, &params, &t[0], &mut Ctx::new(Mode::Train))?;
            let mut g = params.zero_grads();
            let dx = backward(&b2, &params, &cache, &p, &mut g)?;
            Ok(l2.grads(vec![dx], g))
        },
    ))
}

fn downsampler_problem(name: String, rng: &mut Rng64, seed: u64) -> Result<Problem> {
    let mut b = ParamBuilder::new(seed);
    let block = Downsampler::new(&mut b, "down", 3, 8)?;
    single_input_block(name, rng, b, block, &[2, 3, 8, 10], |b, p, x, c| b.forward(p, x, c), |b, p, c, d, g| {
        b.backward(p, c, d, g)
    })
}

fn nonbt_problem(name: String, rng: &mut Rng64, seed: u64, dilation: usize) -> Result<Problem> {
    let mut b = ParamBuilder::new(seed);
    let block = NonBottleneck1d::new(&mut b, "nb", 4, dilation, 0.0)?;
    single_input_block(name, rng, b, block, &[2, 4, 6, 8], |b, p, x, c| b.forward(p, x, c), |b, p, c, d, g| {
        b.backward(p, c, d, g)
    })
}

fn spatial_block_problem(name: String, rng: &mut Rng64, seed: u64, dir: Direction) -> Result<Problem> {
    let mut b = ParamBuilder::new(seed);
    let block = SpatialConv::new(&mut b, "scnn", 4, 9, dir)?;
    single_input_block(
        name,
        rng,
        b,
        block,
        &[2, 4, 6, 8],
        |b, p, x, _| b.forward(p, x).map(|c| (c.output.clone(), c)),
        |b, p, c, d, g| b.backward(p, c, d, g),
    )
}

fn exchange_problem(name: String, rng: &mut Rng64, seed: u64) -> Result<Problem> {
    let mut b = ParamBuilder::new(seed);
    let block = InfoExchange::new(&mut b, "exchange", 4, 9, &DEFAULT_LAYOUT, 0.0)?;
    single_input_block(name, rng, b, block, &[1, 4, 6, 8], |b, p, x, c| b.forward(p, x, c), |b, p, c, d, g| {
        b.backward(p, c, d, g)
    })
}

fn merge_problem(name: String, rng: &mut Rng64, seed: u64) -> Result<Problem> {
    let mut b = ParamBuilder::new(seed);
    let block = FeatureMerge::new(&mut b, "merge", 4);
    let mut params = b.finish();
    jitter_affine(&mut params, rng);
    let shape = [2, 4, 6, 8];
    let skip = normal_tensor(rng, &shape, 1.0);
    let trunk = normal_tensor(rng, &shape, 1.0);
    let probe = normal_tensor(rng, &shape, 1.0);
    let layout = std::sync::Arc::new(ParamLayout::new(params, 2));
    let named = layout.named(vec![("skip".into(), skip), ("trunk".into(), trunk)]);
    let (l1, l2, b1, b2, p) = (layout.clone(), layout, block.clone(), block, probe.clone());
    Ok(Problem::new(
        name,
        named,
        move |t| {
            let params = l1.params(t)?;
            probe_dot(&b1.forward(&params, &t[0], &t[1], &mut Ctx::new(Mode::Train))?.0, &probe)
        },
        move |t| {
            let params = l2.params(t)?;
            let (_, cache) = b2.forward(&params, &t[0], &t[1], &mut Ctx::new(Mode::Train))?;
            let mut g = params.zero_grads();
            let (ds, dt) = b2.backward(&params, &cache, &p, &mut g)?;
            Ok(l2.grads(vec![ds, dt], g))
        },
    ))
}

fn random_labels(rng: &mut Rng64, n: usize, h: usize, w: usize, classes: usize) -> Vec<u8> {
    (0..n * h * w).map(|_| rng.random_range(0..classes) as u8).collect()
}

fn random_exist(rng: &mut Rng64, n: usize, lanes: usize) -> Tensor<f64> {
    Tensor::from_fn(&[n, lanes], |_| if rng.random::<bool>() { 1.0 } else { 0.0 })
}

fn model_problem(name: String, rng: &mut Rng64, seed: u64) -> Result<Problem> {
    // two images so that the deepest batch norm sees 2×4×6 values per channel
    let nb = 2;
    let cfg = ModelConfig::miniature().with_seed(seed).with_input(32, 48);
    let (net, mut params) = LaneNet::build::<f64>(&cfg)?;
    jitter_affine(&mut params, rng);
    let (h, w) = (cfg.input_h, cfg.input_w);
    let x = normal_tensor(rng, &[nb, 3, h, w], 1.0);
    let labels = random_labels(rng, nb, h, w, cfg.num_classes);
    let exist = random_exist(rng, nb, cfg.num_lanes);
    let layout = std::sync::Arc::new(ParamLayout::new(params, 1));
    let named = layout.named(vec![("input".into(), x)]);
    let loss_cfg = LossConfig::default();
    let (l1, l2, n1, n2) = (layout.clone(), layout, net.clone(), net);
    let (lab1, lab2, ex1, ex2, lc1, lc2) = (
        labels.clone(),
        labels,
        exist.clone(),
        exist,
        loss_cfg.clone(),
        loss_cfg,
    );
    Ok(Problem::new(
        name,
        named,
        move |t| {
            let params = l1.params(t)?;
            let fwd = n1.forward(&params, &t[0], Mode::Train)?;
            Ok(total_loss(&fwd.output, &lab1, &ex1, &lc1)?.value.total)
        },
        move |t| {
            let params = l2.params(t)?;
            let fwd = n2.forward(&params, &t[0], Mode::Train)?;
            let lg = total_loss(&fwd.output, &lab2, &ex2, &lc2)?;
            let (g, dx) = n2.backward_with_input(&params, &fwd, &lg.d_seg_logits, &lg.d_exist_probs)?;
            Ok(l2.grads(vec![dx], g))
        },
    ))
}

fn bce_problem(name: String, rng: &mut Rng64) -> Result<Problem> {
    let probs = Tensor::from_fn(&[3, 4], |_| rng.random_range(0.05..0.95));
    let labels = random_exist(rng, 3, 4);
    let l2 = labels.clone();
    Ok(Problem::new(
        name,
        vec![("exist_probs".into(), probs)],
        move |t| Ok(bce_exist(&t[0], &labels, 1e-7)?.value),
        move |t| Ok(vec![bce_exist(&t[0], &l2, 1e-7)?.grad]),
    ))
}

fn ce_problem(name: String, rng: &mut Rng64) -> Result<Problem> {
    let logits = normal_tensor(rng, &[2, 5, 3, 4], 2.0);
    let labels = random_labels(rng, 2, 3, 4, 5);
    let weights = LossConfig::default().class_weights(5);
    let (lab2, w2) = (labels.clone(), weights.clone());
    Ok(Problem::new(
        name,
        vec![("seg_logits".into(), logits)],
        move |t| Ok(weighted_ce_seg(&t[0], &labels, &weights)?.value),
        move |t| Ok(vec![weighted_ce_seg(&t[0], &lab2, &w2)?.grad]),
    ))
}

fn total_loss_problem(name: String, rng: &mut Rng64) -> Result<Problem> {
    let logits = normal_tensor(rng, &[2, 5, 3, 4], 2.0);
    let probs = Tensor::from_fn(&[2, 4], |_| rng.random_range(0.05..0.95));
    let labels = random_labels(rng, 2, 3, 4, 5);
    let exist = random_exist(rng, 2, 4);
    let (lab2, ex2) = (labels.clone(), exist.clone());
    let out = |t: &[Tensor<f64>]| ModelOutput {
        seg_logits: t[0].clone(),
        exist_probs: t[1].clone(),
    };
    Ok(Problem::new(
        name,
        vec![("seg_logits".into(), logits), ("exist_probs".into(), probs)],
        move |t| Ok(total_loss(&out(t), &labels, &exist, &LossConfig::default())?.value.total),
        move |t| {
            let g = total_loss(&out(t), &lab2, &ex2, &LossConfig::default())?;
            Ok(vec![g.d_seg_logits, g.d_exist_probs])
        },
    ))
}

/// conv → transposed conv → fully connected, no nonlinearity: the loss is
/// linear in every single coordinate, so central differences are exact up
/// to rounding.
fn linear_chain_problem(name: String, rng: &mut Rng64) -> Result<Problem> {
    let conv = ConvSpec::new(2, 3, (3, 3)).pad(1, 1).stride(2, 2);
    let up = ConvTransposeSpec::upsample2x(3, 2);
    let x = normal_tensor(rng, &[2, 2, 4, 6], 1.0);
    let w1 = normal_tensor(rng, &conv.weight_shape(), 0.5);
    let b1 = normal_tensor(rng, &[3], 0.5);
    let w2 = normal_tensor(rng, &up.weight_shape(), 0.5);
    let b2 = normal_tensor(rng, &[2], 0.5);
    let feat = 2 * 4 * 6;
    let w3 = normal_tensor(rng, &[feat, 3], 0.3);
    let b3 = normal_tensor(rng, &[3], 0.5);
    let probe = normal_tensor(rng, &[2, 3], 1.0);
    let (c1, u1, c2, u2, p) = (conv.clone(), up.clone(), conv, up, probe.clone());
    Ok(Problem::new(
        name,
        vec![
            ("input".into(), x),
            ("conv.weight".into(), w1),
            ("conv.bias".into(), b1),
            ("tconv.weight".into(), w2),
            ("tconv.bias".into(), b2),
            ("fc.weight".into(), w3),
            ("fc.bias".into(), b3),
        ],
        move |t| {
            let a = numerics::conv2d_forward(&t[0], &t[1], Some(&t[2]), &c1)?;
            let b = numerics::transposed_conv2d_forward(&a, &t[3], Some(&t[4]), &u1)?;
            let f = numerics::fully_connected_forward(&b.reshape(&[2, feat])?, &t[5], &t[6])?;
            probe_dot(&f, &probe)
        },
        move |t| {
            let a = numerics::conv2d_forward(&t[0], &t[1], Some(&t[2]), &c2)?;
            let b = numerics::transposed_conv2d_forward(&a, &t[3], Some(&t[4]), &u2)?;
            let bshape = b.shape().to_vec();
            let flat = b.reshape(&[2, feat])?;
            let g3 = numerics::fully_connected_backward(&flat, &t[5], &p)?;
            let db = g3.d_input.reshape(&bshape)?;
            let g2 = numerics::transposed_conv2d_backward(&a, &t[3], &u2, &db)?;
            let g1 = numerics::conv2d_backward(&t[0], &t[1], &c2, &g2.d_input)?;
            Ok(vec![
                g1.d_input,
                g1.d_weights[0].clone(),
                g1.d_weights[1].clone(),
                g2.d_weights[0].clone(),
                g2.d_weights[1].clone(),
                g3.d_weights[0].clone(),
                g3.d_weights[1].clone(),
            ])
        },
    ))
}
