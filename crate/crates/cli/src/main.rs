use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use lanedet::data::culane::{load_all, load_culane_index, write_culane_dataset};
use lanedet::data::image::{read_image, write_image};
use lanedet::data::lane::format_lines;
use lanedet::data::synth::{generate_with, SynthConfig};
use lanedet::eval::{evaluate_dataset, read_prediction_dir, EvalConfig};
use lanedet::fsio;
use lanedet::infer::Predictor;
use lanedet::network::ModelConfig;
use lanedet::train::gradcheck::{GradcheckConfig, Stencil};
use lanedet::train::scopes::run_gradcheck;
use lanedet::train::{train, LrSchedule, TrainConfig, TrainOptions};
use lanedet::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_IO: u8 = 2;
const EXIT_DIVERGED: u8 = 3;
const EXIT_CHECK_FAILED: u8 = 4;

#[derive(Parser)]
#[command(name = "lanedet", version, about = "Lane detection: synthesize, train, infer, evaluate, certify")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset in CULane layout.
    Synth(SynthArgs),
    /// Train a model on a CULane-layout dataset.
    Train(TrainArgs),
    /// Run a model on one image.
    Infer(InferArgs),
    /// Score predictions (or a model) against a dataset.
    Eval(EvalArgs),
    /// Check every analytic gradient against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 288)]
    height: usize,
    #[arg(long, default_value_t = 800)]
    width: usize,
    /// Share of zero-lane crossroad scenes.
    #[arg(long, default_value_t = 0.1)]
    crossroad_fraction: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Schedule {
    Constant,
    Poly,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// List file relative to the dataset root.
    #[arg(long, default_value = "list/train.txt")]
    list: PathBuf,
    #[arg(long, default_value_t = 1)]
    epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 1e-4)]
    weight_decay: f64,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long, value_enum, default_value_t = Schedule::Constant)]
    schedule: Schedule,
    #[arg(long)]
    max_steps: Option<usize>,
    /// Random horizontal flips.
    #[arg(long)]
    flip: bool,
    #[arg(long, default_value_t = 288)]
    height: usize,
    #[arg(long, default_value_t = 800)]
    width: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Loss log; defaults to `<out>.log.tsv`.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    checkpoint_every: usize,
    /// Print every n-th step to stderr (0 = quiet).
    #[arg(long, default_value_t = 10)]
    print_every: usize,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    out_prob: Option<PathBuf>,
    #[arg(long)]
    out_lines: Option<PathBuf>,
    #[arg(long)]
    overlay: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    exist_threshold: f64,
    #[arg(long, default_value_t = 0.3)]
    prob_threshold: f64,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory of `<image>.pred.txt` files mirroring the dataset layout.
    #[arg(long, conflicts_with = "model", required_unless_present = "model")]
    pred: Option<PathBuf>,
    /// Predict with this model instead of reading prediction files.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "list/test.txt")]
    list: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    iou: f64,
    #[arg(long, default_value_t = 30.0)]
    render_width: f64,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum StencilArg {
    Richardson,
    Central,
}

#[derive(Args)]
struct GradcheckArgs {
    /// `all`, a group (`layers`, `blocks`, `model`, `loss`, `linear`) or a scope name.
    #[arg(long, default_value = "all")]
    scope: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, default_value_t = 200)]
    samples: usize,
    #[arg(long, value_enum, default_value_t = StencilArg::Richardson)]
    stencil: StencilArg,
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) => EXIT_USAGE,
            Error::Diverged { .. } => EXIT_DIVERGED,
            _ => EXIT_IO,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(f) = configure_threads() {
        eprintln!("error: {}", f.message);
        return ExitCode::from(f.code);
    }
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train_cmd(a),
        Command::Infer(a) => infer(a),
        Command::Eval(a) => eval(a),
        Command::Gradcheck(a) => gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            if !f.message.is_empty() {
                eprintln!("error: {}", f.message);
            }
            ExitCode::from(f.code)
        }
    }
}

fn configure_threads() -> CmdResult {
    let Ok(v) = std::env::var("LANEDET_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| usage(format!("LANEDET_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| usage(e.to_string()))
}

fn synth(a: SynthArgs) -> CmdResult {
    let cfg = SynthConfig {
        crossroad_fraction: a.crossroad_fraction,
        ..SynthConfig::new(a.height, a.width)
    };
    let scenes = generate_with(&cfg, a.seed, a.count)?;
    write_culane_dataset(&a.out, &scenes)?;
    println!("wrote {} scenes to {}", scenes.len(), a.out.display());
    Ok(())
}

fn train_cmd(a: TrainArgs) -> CmdResult {
    let model = ModelConfig::new(a.height, a.width).with_seed(a.seed);
    model.validate()?;
    let config = TrainConfig {
        lr: a.lr,
        momentum: a.momentum,
        weight_decay: a.weight_decay,
        batch_size: a.batch_size,
        epochs: a.epochs,
        seed: a.seed,
        lr_schedule: match a.schedule {
            Schedule::Constant => LrSchedule::Constant,
            Schedule::Poly => LrSchedule::Poly { power: 0.9 },
        },
        max_steps: a.max_steps,
        flip: a.flip,
        checkpoint_every: a.checkpoint_every,
        ..TrainConfig::default()
    };
    config.validate()?;
    let index = load_culane_index(&a.data.join(&a.list))?;
    let report = load_all(&index, a.height, a.width);
    if let Some((i, e)) = report.errors.first() {
        return Err(Failure {
            code: EXIT_IO,
            message: format!("dataset entry {} ({}): {e}", i + 1, index.entries[*i].rel_path),
        });
    }
    let samples: Vec<_> = report.samples.into_iter().map(|(_, s)| s).collect();
    let log = a.log.unwrap_or_else(|| with_suffix(&a.out, ".log.tsv"));
    let every = a.print_every;
    let mut progress = |e: &lanedet::train::TrainLogEntry| {
        if every > 0 && e.step % every == 0 {
            eprintln!(
                "step {:>6} epoch {:>4} loss {:.5} (ce {:.5} exist {:.5}) lr {:.2e}",
                e.step, e.epoch, e.total, e.ce, e.exist, e.lr
            );
        }
    };
    let (_, out) = train(
        &model,
        &samples,
        &config,
        TrainOptions {
            checkpoint: Some(a.out.clone()),
            log: Some(log.clone()),
            on_step: Some(&mut progress),
        },
    )?;
    if let Some(last) = out.log.last() {
        println!(
            "trained {} steps on {} images; final loss {:.5}; wrote {} and {}",
            out.log.len(),
            samples.len(),
            last.total,
            a.out.display(),
            log.display()
        );
    }
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn infer(a: InferArgs) -> CmdResult {
    let mut predictor = Predictor::load(&a.model)?;
    predictor.extraction.exist_threshold = a.exist_threshold;
    predictor.extraction.prob_threshold = a.prob_threshold;
    predictor.extraction.validate()?;
    let image = read_image(&a.image)?;
    let p = predictor.predict(&image)?;
    if let Some(path) = &a.out_prob {
        write_image(path, &p.prob_map)?;
    }
    if let Some(path) = &a.out_lines {
        fsio::write_atomic(path, format_lines(&p.original_lanes).as_bytes())?;
    }
    if let Some(path) = &a.overlay {
        write_image(path, &p.overlay)?;
    }
    let exist: Vec<String> = p.exist_probs.iter().map(|v| format!("{v:.3}")).collect();
    println!("{} lane(s); existence [{}]", p.lanes.len(), exist.join(", "));
    Ok(())
}

fn eval(a: EvalArgs) -> CmdResult {
    let index = load_culane_index(&a.data.join(&a.list))?;
    let config = EvalConfig {
        iou_threshold: a.iou,
        render_width: a.render_width,
    };
    let report = match (&a.pred, &a.model) {
        (Some(dir), None) => {
            let lookup = read_prediction_dir(dir, &index)?;
            evaluate_dataset(&index, &config, lookup)?
        }
        (None, Some(model)) => {
            let predictor = Predictor::load(model)?;
            evaluate_dataset(&index, &config, |entry| {
                let image = read_image(&entry.image)?;
                Ok(Some(predictor.predict(&image)?.original_lanes))
            })?
        }
        _ => return Err(usage("exactly one of --pred and --model is required")),
    };
    for missing in &report.missing_predictions {
        eprintln!("warning: no prediction for {missing}; scored as empty");
    }
    let text = report.to_text();
    if let Some(path) = &a.report {
        fsio::write_atomic(path, text.as_bytes())?;
    }
    print!("{text}");
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> CmdResult {
    let config = GradcheckConfig {
        eps: a.eps,
        tol: a.tol,
        samples_per_tensor: a.samples,
        seed: a.seed,
        stencil: match a.stencil {
            StencilArg::Richardson => Stencil::Richardson,
            StencilArg::Central => Stencil::Central,
        },
    };
    let reports = run_gradcheck(&a.scope, &config)?;
    println!(
        "{:<30} {:<40} {:>5} {:>10} result",
        "scope", "tensor", "n", "max rel"
    );
    let mut failed = 0;
    for r in &reports {
        print!("{r}");
        if let Some(t) = r.first_failure() {
            failed += 1;
            eprintln!(
                "FAIL {} / {}: relative error {:.3e} at flat index {} (tol {:.1e})",
                r.scope, t.name, t.max_rel_error, t.worst_index, a.tol
            );
        }
    }
    println!("{} scope(s) checked, {failed} failed", reports.len());
    if failed > 0 {
        return Err(Failure {
            code: EXIT_CHECK_FAILED,
            message: String::new(),
        });
    }
    Ok(())
}
