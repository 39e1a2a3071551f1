use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use seqdet::envsim::{generate_dataset, read_dataset_file, write_dataset_file, LabeledVideo, SyntheticSpec};
use seqdet::harness::{
    estimate_budget, evaluate, steps_sweep, sweep_table, trace_text, BudgetCostModel, SweepConfig, SweepMode,
};
use seqdet::losses::{LossConfig, LossWeights};
use seqdet::policy::{Policy, PolicyConfig, TrainingMode};
use seqdet::trainer::{train, BaselineMode, TrainConfig};
use seqdet::{diffkit::AdamConfig, Error, Result, Scalar};

#[derive(Parser, Debug)]
#[command(name = "seqdet", version, about = "Sequential temporal segment detection with a recurrent policy")]
struct Cli {
    /// Floating-point width used for computation.
    #[arg(long, value_enum, global = true, default_value_t = Precision::F64)]
    precision: Precision,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Precision {
    F32,
    F64,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic planted-segment dataset as JSON Lines.
    GenData(GenDataArgs),
    /// Train a policy and write its checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Write the detections of a checkpoint as JSON Lines.
    Detect(DetectArgs),
    /// mAP, measured time and estimated budget across step counts.
    Sweep(SweepArgs),
    /// Time-budget estimate from per-component costs.
    Budget(BudgetArgs),
    /// Step-by-step listing of one episode.
    Trace(TraceArgs),
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 250)]
    num_videos: usize,
    #[arg(long, default_value_t = 100)]
    frames: usize,
    #[arg(long, default_value_t = 16)]
    feature_dim: usize,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 1)]
    min_segments: usize,
    #[arg(long, default_value_t = 2)]
    max_segments: usize,
    #[arg(long, default_value_t = 15)]
    min_segment_frames: usize,
    #[arg(long, default_value_t = 30)]
    max_segment_frames: usize,
    #[arg(long, default_value_t = 0.5)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    prototype_seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Hybrid,
    Pure,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum BaselineArg {
    Random,
    None,
    Constant,
}

/// Policy shape.
#[derive(Args, Debug, Clone)]
struct PolicyArgs {
    #[arg(long, default_value_t = 6)]
    steps: usize,
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 0.18)]
    xi_variance: f64,
    #[arg(long, default_value_t = 0.05)]
    loc_variance: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::Hybrid)]
    mode: ModeArg,
    /// Foreground classes K.
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 15)]
    neighborhood: usize,
    /// Feed raw features only, without the frame-difference channel.
    #[arg(long)]
    no_diff: bool,
}

/// Optimisation and loss settings.
#[derive(Args, Debug, Clone)]
struct OptimArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 1)]
    rollouts_per_video: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    discount: f64,
    #[arg(long, value_enum, default_value_t = BaselineArg::Random)]
    baseline: BaselineArg,
    /// Value used with `--baseline constant`.
    #[arg(long)]
    baseline_value: Option<f64>,
    #[arg(long, default_value_t = 64)]
    baseline_samples: usize,
    /// Global-norm clipping threshold; 0 disables clipping.
    #[arg(long, default_value_t = 5.0)]
    grad_clip: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda_c: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda_l: f64,
    #[arg(long, default_value_t = 0.5)]
    lambda_r: f64,
    #[arg(long, default_value_t = 0.5)]
    tau_iou: f64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    val: PathBuf,
    /// Checkpoint of the best-validation policy.
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch JSON Lines log.
    #[arg(long)]
    log: Option<PathBuf>,
    #[command(flatten)]
    policy: PolicyArgs,
    #[command(flatten)]
    optim: OptimArgs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.3, 0.4, 0.5, 0.6, 0.7])]
    thresholds: Vec<f64>,
    /// Run with a different step count than the checkpoint's.
    #[arg(long)]
    steps: Option<usize>,
    /// Also write the report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DetectArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    val: PathBuf,
    /// Training data; a policy is trained per step count.
    #[arg(long, conflicts_with = "checkpoint", required_unless_present = "checkpoint")]
    train: Option<PathBuf>,
    /// Reuse these parameters for every step count instead of training.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long = "steps-list", value_delimiter = ',', default_values_t = vec![3, 6, 12])]
    steps_list: Vec<usize>,
    #[arg(long, default_value_t = 0.5)]
    sweep_iou: f64,
    /// JSON rows.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    policy: PolicyArgs,
    #[command(flatten)]
    optim: OptimArgs,
}

#[derive(Args, Debug)]
struct BudgetArgs {
    #[arg(long, default_value_t = 6)]
    steps: usize,
    /// Include one boundary-regression pass.
    #[arg(long)]
    regression: bool,
    #[arg(long, default_value_t = 3.0)]
    feature_ms: f64,
    #[arg(long, default_value_t = 0.1)]
    diff_ms: f64,
    #[arg(long, default_value_t = 5.4)]
    recurrent_ms: f64,
    #[arg(long, default_value_t = 5.5)]
    regression_ms: f64,
    #[arg(long, default_value_t = 15)]
    neighborhood: usize,
    #[arg(long, default_value_t = 10)]
    kappa: usize,
}

#[derive(Args, Debug)]
struct TraceArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Zero-based position of the video in the file.
    #[arg(long, default_value_t = 0)]
    video: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.precision {
        Precision::F32 => run::<f32>(cli.command),
        Precision::F64 => run::<f64>(cli.command),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run<S: Scalar>(command: Command) -> Result<()> {
    match command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd::<S>(a),
        Command::Eval(a) => eval_cmd::<S>(a),
        Command::Detect(a) => detect_cmd::<S>(a),
        Command::Sweep(a) => sweep_cmd::<S>(a),
        Command::Budget(a) => budget_cmd(a),
        Command::Trace(a) => trace_cmd::<S>(a),
    }
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let spec = SyntheticSpec {
        num_videos: a.num_videos,
        frames_per_video: a.frames,
        feature_dim: a.feature_dim,
        num_classes: a.classes,
        min_segments: a.min_segments,
        max_segments: a.max_segments,
        min_segment_frames: a.min_segment_frames,
        max_segment_frames: a.max_segment_frames,
        noise_level: a.noise,
        prototype_seed: a.prototype_seed,
        diff_channel: false,
    };
    let data = generate_dataset::<f64>(&spec, a.seed)?;
    write_dataset_file(&a.out, &data)?;
    println!("wrote {} videos to {}", data.len(), a.out.display());
    Ok(())
}

fn policy_config(p: &PolicyArgs, feature_dim: usize) -> PolicyConfig {
    PolicyConfig {
        steps: p.steps,
        hidden: p.hidden,
        layers: p.layers,
        xi_variance: p.xi_variance,
        loc_variance: p.loc_variance,
        mode: match p.mode {
            ModeArg::Hybrid => TrainingMode::Hybrid,
            ModeArg::Pure => TrainingMode::PureScoreFunction,
        },
        num_classes: p.classes,
        neighborhood: p.neighborhood,
        feature_dim,
        diff_channel: !p.no_diff,
    }
}

fn train_config(o: &OptimArgs) -> Result<TrainConfig> {
    let baseline = match (o.baseline, o.baseline_value) {
        (BaselineArg::Random, None) => BaselineMode::RandomPolicy,
        (BaselineArg::None, None) => BaselineMode::None,
        (BaselineArg::Constant, Some(v)) => BaselineMode::Constant(v),
        (BaselineArg::Constant, None) => {
            return Err(Error::Config("--baseline constant requires --baseline-value".into()))
        }
        (_, Some(_)) => return Err(Error::Config("--baseline-value only applies to --baseline constant".into())),
    };
    Ok(TrainConfig {
        epochs: o.epochs,
        batch_size: o.batch_size,
        rollouts_per_video: o.rollouts_per_video,
        discount: o.discount,
        baseline,
        baseline_samples: o.baseline_samples,
        seed: o.seed,
        loss: LossConfig {
            weights: LossWeights {
                lambda_c: o.lambda_c,
                lambda_l: o.lambda_l,
                lambda_r: o.lambda_r,
            },
            tau_iou: o.tau_iou,
            ..LossConfig::default()
        },
        adam: AdamConfig {
            lr: o.lr,
            ..AdamConfig::default()
        },
        grad_clip: (o.grad_clip > 0.0).then_some(o.grad_clip),
        ..TrainConfig::default()
    })
}

fn load_data<S: Scalar>(path: &Path, diff: bool) -> Result<Vec<LabeledVideo<S>>> {
    read_dataset_file(path, diff)
}

fn feature_dim_of<S: Scalar>(data: &[LabeledVideo<S>], path: &Path) -> Result<usize> {
    data.first()
        .map(|lv| lv.video.feature_dim())
        .ok_or_else(|| Error::Config(format!("{} contains no videos", path.display())))
}

fn load_policy<S: Scalar>(path: &Path, steps: Option<usize>) -> Result<Policy<S>> {
    let policy = Policy::<S>::load(io::BufReader::new(File::open(path)?))?;
    match steps {
        Some(t) => policy.with_steps(t),
        None => Ok(policy),
    }
}

fn train_cmd<S: Scalar>(a: TrainArgs) -> Result<()> {
    let diff = !a.policy.no_diff;
    let train_set = load_data::<S>(&a.train, diff)?;
    let val_set = load_data::<S>(&a.val, diff)?;
    let pc = policy_config(&a.policy, feature_dim_of(&train_set, &a.train)?);
    let tc = train_config(&a.optim)?;
    let init = Policy::<S>::new(pc, a.optim.seed)?;
    let mut log_file = a.log.as_ref().map(|p| File::create(p).map(BufWriter::new)).transpose()?;
    let outcome = train(
        &init,
        &train_set,
        &val_set,
        &tc,
        log_file.as_mut().map(|w| w as &mut dyn Write),
    )?;
    if let Some(mut w) = log_file {
        w.flush()?;
    }
    let mut out = BufWriter::new(File::create(&a.out)?);
    outcome.policy.save(&mut out)?;
    out.flush()?;
    if let Some(reason) = &outcome.aborted {
        eprintln!("training stopped early: {reason}");
    }
    let best = outcome
        .history
        .iter()
        .find(|r| r.epoch == outcome.best_epoch)
        .and_then(|r| r.val_map_at(tc.selection_threshold));
    println!(
        "trained {} epochs; best epoch {} (val mAP@{} = {}); checkpoint {}",
        outcome.history.len(),
        outcome.best_epoch,
        tc.selection_threshold,
        best.map_or_else(|| "n/a".to_string(), |m| format!("{m:.4}")),
        a.out.display()
    );
    Ok(())
}

fn eval_cmd<S: Scalar>(a: EvalArgs) -> Result<()> {
    let policy = load_policy::<S>(&a.checkpoint, a.steps)?;
    let data = load_data::<S>(&a.data, policy.config().diff_channel)?;
    let report = evaluate(&policy, &data, &a.thresholds)?;
    print!("{}", report.to_table());
    if let Some(path) = a.out {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, &report)?;
        w.write_all(b"\n")?;
        w.flush()?;
    }
    Ok(())
}

#[derive(Serialize)]
struct DetectionRecord {
    start: f64,
    end: f64,
    label: usize,
    confidence: f64,
    step: usize,
    probs: Vec<f64>,
}

#[derive(Serialize)]
struct VideoDetections {
    id: String,
    detections: Vec<DetectionRecord>,
}

fn detect_cmd<S: Scalar>(a: DetectArgs) -> Result<()> {
    let policy = load_policy::<S>(&a.checkpoint, a.steps)?;
    let data = load_data::<S>(&a.data, policy.config().diff_channel)?;
    let all = policy.detect_all(&data)?;
    let mut w = BufWriter::new(File::create(&a.out)?);
    for (lv, dets) in data.iter().zip(&all) {
        let rec = VideoDetections {
            id: lv.video.id.clone(),
            detections: dets
                .iter()
                .map(|d| DetectionRecord {
                    start: d.segment.start().as_f64(),
                    end: d.segment.end().as_f64(),
                    label: d.label(),
                    confidence: d.confidence().as_f64(),
                    step: d.step_index,
                    probs: d.class_probs.iter().map(|p| p.as_f64()).collect(),
                })
                .collect(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    println!(
        "wrote {} detections for {} videos to {}",
        all.iter().map(Vec::len).sum::<usize>(),
        all.len(),
        a.out.display()
    );
    Ok(())
}

fn sweep_cmd<S: Scalar>(a: SweepArgs) -> Result<()> {
    let sweep = SweepConfig {
        tau_iou: a.sweep_iou,
        ..SweepConfig::default()
    };
    let tc = train_config(&a.optim)?;
    let rows = match (&a.checkpoint, &a.train) {
        (Some(ckpt), _) => {
            let policy = load_policy::<S>(ckpt, None)?;
            let val_set = load_data::<S>(&a.val, policy.config().diff_channel)?;
            steps_sweep(&[], &val_set, policy.config(), &tc, &a.steps_list, SweepMode::Reuse(&policy), &sweep)?
        }
        (None, Some(train_path)) => {
            let diff = !a.policy.no_diff;
            let train_set = load_data::<S>(train_path, diff)?;
            let val_set = load_data::<S>(&a.val, diff)?;
            let pc = policy_config(&a.policy, feature_dim_of(&train_set, train_path)?);
            let mode = SweepMode::Retrain {
                policy_seed: a.optim.seed,
            };
            steps_sweep(&train_set, &val_set, &pc, &tc, &a.steps_list, mode, &sweep)?
        }
        (None, None) => return Err(Error::Config("sweep needs --train or --checkpoint".into())),
    };
    print!("{}", sweep_table(&rows));
    if let Some(path) = a.out {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, &rows)?;
        w.write_all(b"\n")?;
        w.flush()?;
    }
    Ok(())
}

fn budget_cmd(a: BudgetArgs) -> Result<()> {
    let model = BudgetCostModel {
        feature_ms: a.feature_ms,
        diff_ms: a.diff_ms,
        recurrent_ms: a.recurrent_ms,
        regression_ms: a.regression_ms,
        neighborhood: a.neighborhood,
        kappa: a.kappa,
    };
    let ms = estimate_budget(&model, a.steps, a.regression)?;
    println!("{:.0} ms ({ms:.1} ms, {:.2} s)", ms.round(), ms / 1e3);
    Ok(())
}

fn trace_cmd<S: Scalar>(a: TraceArgs) -> Result<()> {
    let policy = load_policy::<S>(&a.checkpoint, None)?;
    let data = load_data::<S>(&a.data, policy.config().diff_channel)?;
    let lv = data.get(a.video).ok_or_else(|| {
        Error::Config(format!("video index {} out of range ({} videos)", a.video, data.len()))
    })?;
    let text = trace_text(&policy, lv, &LossConfig::default())?;
    match a.out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}
