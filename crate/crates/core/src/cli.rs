//! Command-line interface: track sequences, evaluate predictions, train
//! the toy model, run the gradient-check battery, and render synthetic
//! sequences. Every failure exits nonzero with a one-line message of the
//! form `error: <kind>: <detail>`; error classes map to distinct codes.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{FusionMode, ModelConfig};
use crate::error::{CoreError, Result};
use crate::metrics::evaluate;
use crate::model::{pipeline_grad_check, TrackModel};
use crate::seqio;
use crate::synth::{gen_sequence, sample_scene, SynthScene};
use crate::tensor::{opchecks, GradCheckConfig};
use crate::tracker::track_sequence;
use crate::train::train_toy;

// Exit codes: 2 usage (clap), then one per error class.
const EXIT_IO: i32 = 3;
const EXIT_MALFORMED: i32 = 4;
const EXIT_CONTRACT: i32 = 5;
const EXIT_DIVERGED: i32 = 6;
const EXIT_CHECK_FAILED: i32 = 7;

#[derive(Parser)]
#[command(name = "coordtrack", version, about = "Coordinate-sequence object tracker for thermal-like imagery")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Track a sequence directory with trained weights.
    Track(TrackArgs),
    /// Score a prediction file against ground truth.
    Eval(EvalArgs),
    /// Train the desk-scale model on synthetic sequences.
    TrainToy(TrainToyArgs),
    /// Verify reverse-mode gradients against central differences.
    Gradcheck(GradcheckArgs),
    /// Render a synthetic sequence from a scene file.
    Synth(SynthArgs),
}

#[derive(Args)]
struct TrackArgs {
    /// Weights file produced by train-toy.
    #[arg(long)]
    weights: PathBuf,
    /// Sequence directory (0001.pgm... plus groundtruth_rect.txt).
    #[arg(long)]
    seq: PathBuf,
    /// Output prediction file (x,y,w,h,score per frame).
    #[arg(long)]
    out: PathBuf,
    /// Override the fusion path stored in the weights.
    #[arg(long)]
    fusion: Option<FusionModeArg>,
    /// Template-update score threshold.
    #[arg(long)]
    lambda: Option<f64>,
    /// Minimum frames between template updates.
    #[arg(long)]
    zu: Option<u32>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum FusionModeArg {
    Mpfm,
    Conf,
    Addf,
}

impl From<FusionModeArg> for FusionMode {
    fn from(v: FusionModeArg) -> Self {
        match v {
            FusionModeArg::Mpfm => FusionMode::Mpfm,
            FusionModeArg::Conf => FusionMode::Conf,
            FusionModeArg::Addf => FusionMode::Addf,
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    /// Prediction file from `track`.
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth rectangle file.
    #[arg(long)]
    gt: PathBuf,
    /// Output report file.
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct TrainToyArgs {
    /// `key = value` model/training config.
    #[arg(long)]
    config: PathBuf,
    /// Where to write the trained weights.
    #[arg(long)]
    out_weights: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of synthetic training scenes to sample.
    #[arg(long, default_value_t = 200)]
    scenes: usize,
    /// Frames per synthetic scene.
    #[arg(long, default_value_t = 20)]
    frames: usize,
    /// Override the config's epoch count.
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Maximum relative error accepted.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    #[arg(long, default_value_t = 0x5eed)]
    seed: u64,
    /// Coordinates probed in the full-pipeline check.
    #[arg(long, default_value_t = 48)]
    probes: usize,
}

#[derive(Args)]
struct SynthArgs {
    /// Scene description file.
    #[arg(long)]
    scene: PathBuf,
    /// Output sequence directory.
    #[arg(long)]
    out: PathBuf,
}

pub fn run_cli() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                let first = e.to_string().lines().next().unwrap_or("bad arguments").to_string();
                eprintln!("error: usage: {first}");
                return 2;
            }
            // --help / --version go to stdout with status 0.
            print!("{e}");
            return 0;
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}: {e}", kind(&e));
            exit_code(&e)
        }
    }
}

fn kind(e: &CoreError) -> &'static str {
    match e {
        CoreError::Io { .. } => "io",
        CoreError::Malformed { .. } => "malformed",
        CoreError::Diverged { .. } => "diverged",
        CoreError::ShapeMismatch { .. } | CoreError::Contract { .. } => "contract",
        CoreError::MissingParam { .. } => "missing-param",
        CoreError::DegenerateDecode { .. } => "degenerate-decode",
    }
}

fn exit_code(e: &CoreError) -> i32 {
    match e {
        CoreError::Io { .. } => EXIT_IO,
        CoreError::Malformed { .. } => EXIT_MALFORMED,
        CoreError::Diverged { .. } => EXIT_DIVERGED,
        _ => EXIT_CONTRACT,
    }
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Track(args) => track(args),
        Command::Eval(args) => eval(args),
        Command::TrainToy(args) => train_toy_cmd(args),
        Command::Gradcheck(args) => gradcheck(args),
        Command::Synth(args) => synth(args),
    }
}

fn track(args: TrackArgs) -> Result<i32> {
    let mut model = TrackModel::load(&args.weights)?;
    if let Some(fusion) = args.fusion {
        model = model.with_fusion(fusion.into())?;
    }
    if let Some(lambda) = args.lambda {
        model.cfg.lambda = lambda;
    }
    if let Some(zu) = args.zu {
        model.cfg.zu = zu;
    }
    model.cfg.validate()?;

    let seq = seqio::read_sequence(&args.seq)?;
    let init = seq.ground_truth[0];
    let results = track_sequence(&model, &seq.frames, &init, &model.cfg)?;
    seqio::write_pred_file(&args.out, &results)?;
    println!("tracked {} frames -> {}", results.len(), args.out.display());
    Ok(0)
}

fn eval(args: EvalArgs) -> Result<i32> {
    let pred = seqio::read_box_file(&args.pred)?;
    let gt = seqio::read_box_file(&args.gt)?;
    let report = evaluate(&pred, &gt)?;
    seqio::write_report(&args.report, &report)?;
    println!(
        "frames {} suc {:.6} pre {:.6} normp {:.6}",
        report.per_frame_iou.len(),
        report.suc,
        report.pre,
        report.normp
    );
    Ok(0)
}

fn train_toy_cmd(args: TrainToyArgs) -> Result<i32> {
    let mut cfg = ModelConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if args.scenes == 0 {
        return Err(CoreError::contract("train-toy", "need at least one scene"));
    }
    let scenes: Vec<SynthScene> = (0..args.scenes)
        .map(|i| sample_scene(cfg.seed.wrapping_add(i as u64), args.frames))
        .collect();
    let epochs = args.epochs.unwrap_or(cfg.epochs);
    let (model, curve) = train_toy(&cfg, &scenes, epochs)?;
    for (i, loss) in curve.iter().enumerate() {
        println!("epoch {} loss {:.6}", i + 1, loss);
    }
    model.save(&args.out_weights)?;
    println!("weights -> {}", args.out_weights.display());
    Ok(0)
}

fn gradcheck(args: GradcheckArgs) -> Result<i32> {
    let mut all_passed = true;
    let mut worst: f64 = 0.0;

    let outcomes = opchecks::run_op_gradchecks(args.eps, args.tol, args.seed)?;
    for o in &outcomes {
        worst = worst.max(o.max_rel_err);
        if !o.passed {
            all_passed = false;
            println!("FAIL {} max-rel-err {:.3e}", o.name, o.max_rel_err);
        }
    }
    println!("ops: {} checks, max rel err {:.3e}", outcomes.len(), worst);

    let cfg = ModelConfig::toy();
    for fusion in [FusionMode::Mpfm, FusionMode::Conf, FusionMode::Addf] {
        let report = pipeline_grad_check(
            &ModelConfig { fusion, ..cfg.clone() },
            args.seed,
            &GradCheckConfig { eps: args.eps, tol: args.tol, probes: args.probes, seed: args.seed },
        )?;
        println!(
            "pipeline[{fusion}]: {} probes, max rel err {:.3e}{}",
            report.checks.len(),
            report.max_rel_err,
            if report.passed() { "" } else { " FAIL" }
        );
        worst = worst.max(report.max_rel_err);
        all_passed &= report.passed();
    }

    if all_passed {
        println!("gradcheck PASS (tol {:.1e}, max rel err {:.3e})", args.tol, worst);
        Ok(0)
    } else {
        println!("gradcheck FAIL (tol {:.1e}, max rel err {:.3e})", args.tol, worst);
        Ok(EXIT_CHECK_FAILED)
    }
}

fn synth(args: SynthArgs) -> Result<i32> {
    let scene = SynthScene::load(&args.scene)?;
    let (frames, gt) = gen_sequence(&scene)?;
    seqio::write_sequence(&args.out, &frames, &gt)?;
    println!("wrote {} frames -> {}", frames.len(), args.out.display());
    Ok(0)
}
