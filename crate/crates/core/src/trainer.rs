//! Recurrent policy-gradient training.
//!
//! For a batch of `N` videos the gradient of the expected return is
//! estimated as `1/N sum_n sum_t grad log pi(nu_t^n) * (R_t^n - b_t)`, where
//! `R_t` is the discounted return from step `t` and `b_t` the return a random
//! selection policy earns at the same step. Parameters move by Adam descent
//! on the negated estimate.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffkit::{adam_step, AdamConfig, AdamState, GradTape, HeadGrads};
use crate::envsim::{returns_to_go, LabeledVideo};
use crate::error::{Error, Result};
use crate::losses::{LossBreakdown, LossConfig};
use crate::policy::{Policy, RolloutMode, TrainingMode, TrajectoryRecord};
use crate::rng::{derive_seed, stream, tag};
use crate::scalar::Scalar;
use crate::segmetrics::{mean_ap, RankingMode, DEFAULT_EVAL_THRESHOLDS};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "value")]
pub enum BaselineMode {
    /// Per-step return of a policy that picks the next frame uniformly at random.
    #[default]
    RandomPolicy,
    None,
    Constant(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Independent stochastic rollouts drawn per video in a batch.
    pub rollouts_per_video: usize,
    /// Discount factor `tau` in `(0, 1]`.
    pub discount: f64,
    pub baseline: BaselineMode,
    /// Random-selection rollouts per baseline refresh.
    pub baseline_samples: usize,
    pub seed: u64,
    pub loss: LossConfig<f64>,
    pub adam: AdamConfig,
    /// Global-norm clipping threshold; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub eval_thresholds: Vec<f64>,
    /// Threshold whose validation mAP picks the returned model.
    pub selection_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            rollouts_per_video: 1,
            discount: 0.9,
            baseline: BaselineMode::RandomPolicy,
            baseline_samples: 64,
            seed: 0,
            loss: LossConfig::default(),
            adam: AdamConfig::default(),
            grad_clip: Some(5.0),
            eval_thresholds: DEFAULT_EVAL_THRESHOLDS.to_vec(),
            selection_threshold: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return Err(Error::Config(format!("discount must be in (0, 1], got {}", self.discount)));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.rollouts_per_video < 1 {
            return Err(Error::Config("rollouts_per_video must be >= 1".into()));
        }
        self.loss.weights.validate()
    }

    fn loss_as<S: Scalar>(&self) -> LossConfig<S> {
        LossConfig {
            weights: crate::losses::LossWeights {
                lambda_c: S::lit(self.loss.weights.lambda_c),
                lambda_l: S::lit(self.loss.weights.lambda_l),
                lambda_r: S::lit(self.loss.weights.lambda_r),
            },
            tau_iou: S::lit(self.loss.tau_iou),
            scaling: self.loss.scaling,
        }
    }
}

/// Expected per-step return of the random selection policy.
#[derive(Clone, Debug, PartialEq)]
pub struct BaselineEstimate<S> {
    pub per_step: Vec<S>,
    /// Standard error of each per-step mean.
    pub std_err: Vec<S>,
    pub samples: usize,
}

impl<S: Scalar> BaselineEstimate<S> {
    pub fn zeros(steps: usize) -> Self {
        Self {
            per_step: vec![S::zero(); steps],
            std_err: vec![S::zero(); steps],
            samples: 0,
        }
    }

    pub fn constant(steps: usize, value: f64) -> Self {
        Self {
            per_step: vec![S::lit(value); steps],
            ..Self::zeros(steps)
        }
    }
}

/// Estimates the per-step baseline by running the current heads with the
/// next position drawn uniformly at random.
pub fn estimate_baseline<S: Scalar>(
    policy: &Policy<S>,
    data: &[LabeledVideo<S>],
    config: &TrainConfig,
    seed: u64,
) -> Result<BaselineEstimate<S>> {
    let steps = policy.config().steps;
    match config.baseline {
        BaselineMode::None => return Ok(BaselineEstimate::zeros(steps)),
        BaselineMode::Constant(v) => return Ok(BaselineEstimate::constant(steps, v)),
        BaselineMode::RandomPolicy => {}
    }
    if data.is_empty() {
        return Err(Error::Config("baseline estimation needs at least one video".into()));
    }
    let samples = config.baseline_samples.max(1);
    let tau = S::lit(config.discount);
    let loss = config.loss_as::<S>();
    let mut pick = stream(seed, &[tag::BASELINE]);
    let picks: Vec<usize> = (0..samples).map(|_| pick.gen_range(0..data.len())).collect();
    let returns: Vec<Vec<S>> = picks
        .par_iter()
        .enumerate()
        .map(|(i, &v)| {
            let mut rng = stream(seed, &[tag::BASELINE, i as u64]);
            let lv = &data[v];
            let traj = policy.rollout(&lv.video, &lv.gts, &loss, RolloutMode::RandomSelection, &mut rng)?;
            Ok(returns_to_go(&traj.rewards(), tau))
        })
        .collect::<Result<_>>()?;
    let n = S::from_usize_lossy(samples);
    let mut per_step = vec![S::zero(); steps];
    let mut std_err = vec![S::zero(); steps];
    for t in 0..steps {
        let mean = returns.iter().map(|r| r[t]).sum::<S>() / n;
        let var = if samples > 1 {
            returns.iter().map(|r| (r[t] - mean) * (r[t] - mean)).sum::<S>() / (n - S::one())
        } else {
            S::zero()
        };
        per_step[t] = mean;
        std_err[t] = (var / n).sqrt();
    }
    Ok(BaselineEstimate {
        per_step,
        std_err,
        samples,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    pub videos: usize,
    pub mean_return: f64,
    pub mean_loss: LossBreakdown<f64>,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    /// Value of the differentiated surrogate `-J` plus supervised terms.
    pub surrogate: f64,
    pub skipped: bool,
}

/// Per-step head gradients of one trajectory for the descent direction.
///
/// Score-function part: `-(R_t - b_t) / N * grad log pi_t`. In hybrid mode the
/// supervised classification/localization gradient `/ N` is added.
pub fn trajectory_head_grads<S: Scalar>(
    policy: &Policy<S>,
    traj: &TrajectoryRecord<S>,
    lv: &LabeledVideo<S>,
    baseline: &BaselineEstimate<S>,
    tau: S,
    loss: &LossConfig<S>,
    batch_len: usize,
) -> Result<(Vec<HeadGrads<S>>, S)> {
    let n = S::from_usize_lossy(batch_len);
    let returns = returns_to_go(&traj.rewards(), tau);
    let targets = match policy.config().mode {
        TrainingMode::Hybrid => Some(policy.step_targets(traj, &lv.gts)),
        TrainingMode::PureScoreFunction => None,
    };
    let mut surrogate = S::zero();
    let mut grads = Vec::with_capacity(traj.steps.len());
    for (t, step) in traj.steps.iter().enumerate() {
        let advantage = returns[t] - baseline.per_step[t];
        let weight = -advantage / n;
        let mut g = policy.logdensity_grads(&step.output, &step.action)?;
        g.d_center *= weight;
        g.d_width *= weight;
        g.d_xi_mean *= weight;
        g.d_logits.iter_mut().for_each(|d| *d *= weight);
        surrogate += weight * step.log_density;
        if let Some(targets) = &targets {
            let (value, sup) = policy.supervised_step(&step.output, &targets[t], loss)?;
            surrogate += value / n;
            g.d_center += sup.d_center / n;
            g.d_width += sup.d_width / n;
            g.d_xi_mean += sup.d_xi_mean / n;
            for (d, s) in g.d_logits.iter_mut().zip(&sup.d_logits) {
                *d += *s / n;
            }
        }
        grads.push(g);
    }
    Ok((grads, surrogate))
}

/// Monte-Carlo gradient over one batch. Each video gets its own rollout
/// stream derived from `seed` and its position in the batch.
pub fn policy_gradient_batch<S: Scalar>(
    policy: &Policy<S>,
    batch: &[&LabeledVideo<S>],
    config: &TrainConfig,
    baseline: &BaselineEstimate<S>,
    seed: u64,
) -> Result<(GradTape<S>, BatchStats)> {
    let tau = S::lit(config.discount);
    let loss = config.loss_as::<S>();
    let k = config.rollouts_per_video;
    let total = batch.len() * k;
    let parts: Vec<(GradTape<S>, S, S, LossBreakdown<S>)> = (0..total)
        .into_par_iter()
        .map(|j| {
            let (i, r) = (j / k, j % k);
            let lv = batch[i];
            let mut rng = stream(seed, &[tag::ROLLOUT, i as u64, r as u64]);
            let traj = policy.rollout(&lv.video, &lv.gts, &loss, RolloutMode::Stochastic, &mut rng)?;
            let (grads, surrogate) = trajectory_head_grads(policy, &traj, lv, baseline, tau, &loss, total)?;
            let mut tape = GradTape::zeros_like(policy.params());
            policy.backward(&traj, &grads, &mut tape)?;
            let ret = returns_to_go(&traj.rewards(), tau).first().copied().unwrap_or_else(S::zero);
            Ok((tape, surrogate, ret, traj.loss))
        })
        .collect::<Result<_>>()?;

    let mut tape = GradTape::zeros_like(policy.params());
    let mut stats = BatchStats {
        videos: batch.len(),
        ..BatchStats::default()
    };
    let n = total.max(1) as f64;
    for (part, surrogate, ret, l) in &parts {
        tape.merge(part);
        stats.surrogate += surrogate.as_f64();
        stats.mean_return += ret.as_f64() / n;
        stats.mean_loss.cls += l.cls.as_f64() / n;
        stats.mean_loss.loc += l.loc.as_f64() / n;
        stats.mean_loss.ret += l.ret.as_f64() / n;
        stats.mean_loss.total += l.total.as_f64() / n;
    }
    stats.grad_norm = tape.global_norm().as_f64();
    if !tape.all_finite() {
        stats.skipped = true;
        tape.zero();
    }
    Ok((tape, stats))
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossBreakdown<f64>,
    pub mean_return: f64,
    pub grad_norm: f64,
    pub skipped_batches: usize,
    /// `(iou threshold, validation mAP)`, confidence ranking.
    pub val_map: Vec<(f64, f64)>,
    pub wall_ms: f64,
}

impl EpochRecord {
    /// Compares everything except wall time.
    pub fn same_outcome(&self, other: &Self) -> bool {
        Self { wall_ms: 0.0, ..self.clone() } == Self { wall_ms: 0.0, ..other.clone() }
    }

    pub fn val_map_at(&self, threshold: f64) -> Option<f64> {
        self.val_map
            .iter()
            .find(|(t, _)| (t - threshold).abs() < 1e-9)
            .map(|&(_, m)| m)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<S> {
    /// Model with the best validation mAP at the selection threshold (the
    /// final model when there is no validation data).
    pub policy: Policy<S>,
    pub final_policy: Policy<S>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    /// Set when training stopped early on a non-finite loss.
    pub aborted: Option<String>,
}

/// Confidence-ranked validation mAP at each threshold.
pub fn validation_map<S: Scalar>(
    policy: &Policy<S>,
    data: &[LabeledVideo<S>],
    thresholds: &[f64],
) -> Result<Vec<(f64, f64)>> {
    if data.is_empty() {
        return Ok(Vec::new());
    }
    let dets = policy.detect_all(data)?;
    let gts: Vec<_> = data.iter().map(|lv| lv.gts.clone()).collect();
    thresholds
        .iter()
        .map(|&t| Ok((t, mean_ap(&dets, &gts, S::lit(t), RankingMode::Confidence)?.as_f64())))
        .collect()
}

/// Trains `init` on `train_set`, validating on `val_set` after every epoch.
/// One JSON record per epoch is appended to `log` when given.
pub fn train<S: Scalar>(
    init: &Policy<S>,
    train_set: &[LabeledVideo<S>],
    val_set: &[LabeledVideo<S>],
    config: &TrainConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainOutcome<S>> {
    config.validate()?;
    if train_set.is_empty() && config.epochs > 0 {
        return Err(Error::Config("training set is empty".into()));
    }
    let mut policy = init.clone();
    let mut adam = AdamState::new(policy.params(), config.adam);
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, Policy<S>)> = None;
    let mut aborted = None;
    let clip = config.grad_clip.map(S::lit);

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let baseline = estimate_baseline(&policy, train_set, config, derive_seed(config.seed, &[tag::BASELINE, epoch as u64]))?;
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut stream(config.seed, &[tag::SHUFFLE, epoch as u64]));

        let mut loss = LossBreakdown::<f64>::default();
        let (mut mean_return, mut grad_norm, mut skipped, mut seen) = (0.0, 0.0, 0usize, 0usize);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&LabeledVideo<S>> = chunk.iter().map(|&i| &train_set[i]).collect();
            let seed = derive_seed(config.seed, &[tag::ROLLOUT, epoch as u64, b as u64]);
            let (mut tape, stats) = policy_gradient_batch(&policy, &batch, config, &baseline, seed)?;
            let w = chunk.len() as f64;
            loss.cls += stats.mean_loss.cls * w;
            loss.loc += stats.mean_loss.loc * w;
            loss.ret += stats.mean_loss.ret * w;
            loss.total += stats.mean_loss.total * w;
            mean_return += stats.mean_return * w;
            grad_norm += stats.grad_norm;
            seen += chunk.len();
            if stats.skipped {
                skipped += 1;
                continue;
            }
            if let Some(max) = clip {
                tape.clip_global_norm(max);
            }
            if adam_step(policy.params_mut(), &tape, &mut adam).is_err() {
                skipped += 1;
            }
        }
        let batches = order.len().div_ceil(config.batch_size).max(1) as f64;
        let seen = seen.max(1) as f64;
        let record = EpochRecord {
            epoch,
            loss: LossBreakdown {
                cls: loss.cls / seen,
                loc: loss.loc / seen,
                ret: loss.ret / seen,
                total: loss.total / seen,
            },
            mean_return: mean_return / seen,
            grad_norm: grad_norm / batches,
            skipped_batches: skipped,
            val_map: if policy.params().all_finite() {
                validation_map(&policy, val_set, &config.eval_thresholds)?
            } else {
                Vec::new()
            },
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        };
        if let Some(w) = log.as_deref_mut() {
            serde_json::to_writer(&mut *w, &record)?;
            w.write_all(b"\n")?;
        }
        let diverged = !record.loss.total.is_finite() || !policy.params().all_finite();
        if diverged {
            history.push(record);
            aborted = Some(format!("non-finite loss or parameters at epoch {epoch}"));
            break;
        }
        let score = record.val_map_at(config.selection_threshold).unwrap_or(f64::NEG_INFINITY);
        if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
            best = Some((score, epoch, policy.clone()));
        }
        history.push(record);
    }

    let final_policy = if aborted.is_some() {
        best.as_ref().map_or_else(|| init.clone(), |(_, _, p)| p.clone())
    } else {
        policy
    };
    let (best_epoch, chosen) = match best {
        Some((_, e, p)) if !val_set.is_empty() => (e, p),
        Some((_, e, _)) => (e, final_policy.clone()),
        None => (0, final_policy.clone()),
    };
    Ok(TrainOutcome {
        policy: chosen,
        final_policy,
        history,
        best_epoch,
        aborted,
    })
}
