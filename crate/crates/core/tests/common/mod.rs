//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use seqdet::diffkit::{gaussian_logpdf, GradTape, HeadGrads, HeadOutput, Heads, Lstm, ParamSet};
use seqdet::envsim::{generate_dataset, LabeledVideo, SyntheticSpec};
use seqdet::losses::{cls_error, cls_error_grad, one_hot, LossConfig};
use seqdet::policy::{Policy, PolicyConfig, RolloutMode, TrainingMode, TrajectoryRecord};
use seqdet::segmetrics::{Detection, GroundTruthSegment, GroundTruthSet, RankingMode, Segment};
use seqdet::trainer::{trajectory_head_grads, BaselineEstimate, TrainConfig};

// ---------------------------------------------------------------------------
// acceptance setup

pub const ACCEPT_DATA_SEED: u64 = 1000;
pub const ACCEPT_TRAIN: usize = 200;
pub const ACCEPT_VAL: usize = 50;
pub const ACCEPT_EPOCHS: usize = 60;
pub const ACCEPT_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

/// 100 frames, D = 16, K = 3, one or two planted segments, noise 0.5.
pub fn acceptance_spec() -> SyntheticSpec {
    SyntheticSpec {
        num_videos: ACCEPT_TRAIN + ACCEPT_VAL,
        ..SyntheticSpec::default()
    }
}

pub fn acceptance_data() -> (Vec<LabeledVideo<f64>>, Vec<LabeledVideo<f64>>) {
    let mut all = generate_dataset::<f64>(&acceptance_spec(), ACCEPT_DATA_SEED).unwrap();
    let val = all.split_off(ACCEPT_TRAIN);
    (all, val)
}

pub fn acceptance_policy_config() -> PolicyConfig {
    PolicyConfig::default()
}

pub fn acceptance_train_config(seed: u64) -> TrainConfig {
    let mut tc = TrainConfig {
        epochs: ACCEPT_EPOCHS,
        batch_size: 8,
        seed,
        ..TrainConfig::default()
    };
    tc.adam.lr = 1e-3;
    tc
}

// ---------------------------------------------------------------------------
// small random fixtures

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_segment<R: Rng>(rng: &mut R) -> Segment<f64> {
    let a: f64 = rng.gen();
    let b: f64 = rng.gen();
    let (s, e) = if a < b { (a, b) } else { (b, a) };
    Segment::new(s, e.max(s + 1e-3).min(1.0)).unwrap()
}

/// Random probability row over `labels` entries whose argmax is not background
/// unless `allow_background`.
pub fn random_probs<R: Rng>(rng: &mut R, labels: usize, allow_background: bool) -> Vec<f64> {
    loop {
        let raw: Vec<f64> = (0..labels).map(|_| rng.gen::<f64>() + 1e-3).collect();
        let total: f64 = raw.iter().sum();
        let p: Vec<f64> = raw.iter().map(|x| x / total).collect();
        let top = (0..labels).fold(0, |b, i| if p[i] > p[b] { i } else { b });
        if allow_background || top != 0 {
            return p;
        }
    }
}

pub fn random_gts<R: Rng>(rng: &mut R, count: usize, classes: usize) -> GroundTruthSet<f64> {
    let items = (0..count)
        .map(|_| GroundTruthSegment {
            segment: random_segment(rng),
            label: rng.gen_range(1..=classes),
        })
        .collect();
    GroundTruthSet::new(items).unwrap()
}

pub fn random_dets<R: Rng>(rng: &mut R, count: usize, classes: usize, near: &GroundTruthSet<f64>) -> Vec<Detection<f64>> {
    (0..count)
        .map(|i| {
            // half of the detections are jittered copies of a ground truth
            let seg = if !near.is_empty() && rng.gen_bool(0.5) {
                let g = near.items()[rng.gen_range(0..near.len())].segment;
                let s = (g.start() + rng.gen_range(-0.1..0.1)).clamp(0.0, 0.98);
                let e = (g.end() + rng.gen_range(-0.1..0.1)).clamp(s + 0.01, 1.0);
                Segment::new(s, e).unwrap()
            } else {
                random_segment(rng)
            };
            Detection::new(seg, random_probs(rng, classes + 1, false), i + 1).unwrap()
        })
        .collect()
}

// ---------------------------------------------------------------------------
// AP oracle

fn oracle_iou(a: &Segment<f64>, b: &Segment<f64>) -> f64 {
    let inter = (a.end().min(b.end()) - a.start().max(b.start())).max(0.0);
    let union = (a.end() - a.start()) + (b.end() - b.start()) - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

fn oracle_argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..p.len() {
        if p[i] > p[best] {
            best = i;
        }
    }
    best
}

/// AP of `class` by enumerating every cutoff of the ranked list: the sum of
/// precision at each relevant rank divided by the number of positives.
pub fn brute_force_ap(
    videos: &[(Vec<Detection<f64>>, GroundTruthSet<f64>)],
    class: usize,
    tau: f64,
    mode: RankingMode,
) -> f64 {
    let positives = videos
        .iter()
        .map(|(_, g)| g.items().iter().filter(|x| x.label == class).count())
        .sum::<usize>();
    if positives == 0 {
        return 0.0;
    }
    let mut list: Vec<(usize, usize, f64)> = Vec::new();
    for (v, (dets, gts)) in videos.iter().enumerate() {
        for (d, det) in dets.iter().enumerate() {
            if oracle_argmax(&det.class_probs) != class {
                continue;
            }
            let key = match mode {
                RankingMode::Overlap => gts.items().iter().map(|g| oracle_iou(&det.segment, &g.segment)).fold(0.0, f64::max),
                RankingMode::Confidence => det.class_probs[class],
            };
            list.push((v, d, key));
        }
    }
    // insertion sort, descending, stable
    for i in 1..list.len() {
        let mut j = i;
        while j > 0 && list[j - 1].2 < list[j].2 {
            list.swap(j - 1, j);
            j -= 1;
        }
    }
    let mut used: Vec<Vec<bool>> = videos.iter().map(|(_, g)| vec![false; g.len()]).collect();
    let mut relevant = Vec::with_capacity(list.len());
    for &(v, d, _) in &list {
        let det = &videos[v].0[d];
        let gts = videos[v].1.items();
        let hit = match mode {
            RankingMode::Overlap => {
                // the single best-overlapping ground truth, lowest index on ties
                let mut best: Option<(usize, f64)> = None;
                for (i, g) in gts.iter().enumerate() {
                    let o = oracle_iou(&det.segment, &g.segment);
                    if o > 0.0 && best.is_none_or(|(_, b)| o > b) {
                        best = Some((i, o));
                    }
                }
                best.filter(|&(i, o)| gts[i].label == class && o >= tau && !used[v][i]).map(|(i, _)| i)
            }
            RankingMode::Confidence => {
                let mut cands: Vec<(usize, f64)> = gts
                    .iter()
                    .enumerate()
                    .filter(|(i, g)| g.label == class && !used[v][*i])
                    .map(|(i, g)| (i, oracle_iou(&det.segment, &g.segment)))
                    .filter(|&(_, o)| o >= tau && o > 0.0)
                    .collect();
                cands.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal));
                cands.first().map(|&(i, _)| i)
            }
        };
        if let Some(i) = hit {
            used[v][i] = true;
        }
        relevant.push(hit.is_some());
    }
    let mut sum = 0.0;
    for k in 0..relevant.len() {
        if relevant[k] {
            let hits_so_far = relevant[..=k].iter().filter(|&&r| r).count();
            sum += hits_so_far as f64 / (k + 1) as f64;
        }
    }
    sum / positives as f64
}

pub fn brute_force_map(videos: &[(Vec<Detection<f64>>, GroundTruthSet<f64>)], tau: f64, mode: RankingMode) -> f64 {
    let mut classes: Vec<usize> = videos.iter().flat_map(|(_, g)| g.items().iter().map(|x| x.label)).collect();
    classes.sort_unstable();
    classes.dedup();
    classes.iter().map(|&c| brute_force_ap(videos, c, tau, mode)).sum::<f64>() / classes.len() as f64
}

/// Random fixture with at most 6 detections and 4 ground truths in total,
/// spread over one or two videos.
pub fn ap_fixture(seed: u64) -> Vec<(Vec<Detection<f64>>, GroundTruthSet<f64>)> {
    let mut r = rng(seed);
    let classes = r.gen_range(1..=3);
    let videos = r.gen_range(1..=2);
    let mut gt_left = r.gen_range(1..=4usize);
    let mut det_left = r.gen_range(0..=6usize);
    (0..videos)
        .map(|v| {
            let last = v + 1 == videos;
            let g = if last { gt_left } else { r.gen_range(0..=gt_left) };
            let d = if last { det_left } else { r.gen_range(0..=det_left) };
            gt_left -= g;
            det_left -= d;
            let gts = random_gts(&mut r, g, classes);
            let dets = random_dets(&mut r, d, classes, &gts);
            (dets, gts)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// finite differences

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

/// `|a - n| / max(|a|, |n|)`. The denominator is floored at `1e-4` times the
/// magnitude of the objective `f` itself: a central difference of `f` carries
/// rounding noise near `eps |f| / h`, so derivatives much smaller than `|f|`
/// can only be resolved on that absolute scale.
pub fn rel_err(analytic: f64, numeric: f64, f: f64) -> f64 {
    let floor = 1e-4 * f.abs().max(1.0);
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Largest relative error between `tape` and central differences of `f`
/// over every scalar in `params`.
pub fn check_params<F>(params: &ParamSet<f64>, tape: &GradTape<f64>, mut f: F) -> f64
where
    F: FnMut(&ParamSet<f64>) -> f64,
{
    let mut p = params.clone();
    let f0 = f(&p);
    let mut worst: f64 = 0.0;
    for i in 0..p.num_scalars() {
        let x = p.flat_get(i);
        p.flat_set(i, x + FD_STEP);
        let up = f(&p);
        p.flat_set(i, x - FD_STEP);
        let down = f(&p);
        p.flat_set(i, x);
        worst = worst.max(rel_err(tape.flat_get(i), (up - down) / (2.0 * FD_STEP), f0));
    }
    worst
}

/// LSTM of at most 8 units and 5 steps; objective `sum_t w_t . h_t`.
pub fn lstm_gradient_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let input = r.gen_range(1..=5);
    let hidden = r.gen_range(1..=8);
    let layers = r.gen_range(1..=2);
    let steps = r.gen_range(1..=5);
    let mut params = ParamSet::new();
    let lstm = Lstm::register(&mut params, "lstm", input, hidden, layers, &mut r);
    for t in params.tensors_mut() {
        t.data.iter_mut().for_each(|v| *v += r.gen_range(-0.5..0.5));
    }
    let xs: Vec<Vec<f64>> = (0..steps).map(|_| (0..input).map(|_| r.gen_range(-2.0..2.0)).collect()).collect();
    let ws: Vec<Vec<f64>> = (0..steps).map(|_| (0..hidden).map(|_| r.gen_range(-1.0..1.0)).collect()).collect();
    let objective = |p: &ParamSet<f64>, xs: &[Vec<f64>]| {
        let (hs, _, _) = lstm.forward(p, xs, &lstm.zero_state()).unwrap();
        hs.iter().zip(&ws).map(|(h, w)| h.iter().zip(w).map(|(a, b)| a * b).sum::<f64>()).sum::<f64>()
    };
    let (_, _, cache) = lstm.forward(&params, &xs, &lstm.zero_state()).unwrap();
    let mut tape = GradTape::zeros_like(&params);
    let dx = lstm.backward(&params, &cache, &ws, &mut tape).unwrap();
    let mut worst = check_params(&params, &tape, |p| objective(p, &xs));
    // input gradients
    for t in 0..steps {
        for j in 0..input {
            let mut up = xs.clone();
            up[t][j] += FD_STEP;
            let mut down = xs.clone();
            down[t][j] -= FD_STEP;
            let num = (objective(&params, &up) - objective(&params, &down)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(dx[t][j], num, objective(&params, &xs)));
        }
    }
    worst
}

/// Output heads on a random hidden state; objective linear in the
/// post-activation outputs (center, width, logits, next-position mean).
pub fn heads_gradient_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let hidden = r.gen_range(1..=8);
    let labels = r.gen_range(2..=5);
    let mut params = ParamSet::new();
    let heads = Heads::register(&mut params, hidden, labels, &mut r);
    for t in params.tensors_mut() {
        t.data.iter_mut().for_each(|v| *v += r.gen_range(-0.5..0.5));
    }
    let h: Vec<f64> = (0..hidden).map(|_| r.gen_range(-1.0..1.0)).collect();
    let g = HeadGrads {
        d_center: r.gen_range(-1.0..1.0),
        d_width: r.gen_range(-1.0..1.0),
        d_logits: (0..labels).map(|_| r.gen_range(-1.0..1.0)).collect(),
        d_xi_mean: r.gen_range(-1.0..1.0),
    };
    let objective = |p: &ParamSet<f64>, h: &[f64]| {
        let o = heads.forward(p, h);
        g.d_center * o.center
            + g.d_width * o.width
            + g.d_xi_mean * o.xi_mean
            + o.logits.iter().zip(&g.d_logits).map(|(a, b)| a * b).sum::<f64>()
    };
    let out = heads.forward(&params, &h);
    let mut tape = GradTape::zeros_like(&params);
    let dh = heads.backward(&params, &h, &out, &g, &mut tape);
    let mut worst = check_params(&params, &tape, |p| objective(p, &h));
    for j in 0..hidden {
        let mut up = h.clone();
        up[j] += FD_STEP;
        let mut down = h.clone();
        down[j] -= FD_STEP;
        let num = (objective(&params, &up) - objective(&params, &down)) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(dh[j], num, objective(&params, &h)));
    }
    worst
}

/// Derivative of the Gaussian log-density with respect to its mean.
pub fn gaussian_gradient_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let x: f64 = r.gen_range(-1.0..2.0);
    let mean: f64 = r.gen_range(0.0..1.0);
    let var: f64 = r.gen_range(0.01..1.0);
    let (lp, d) = gaussian_logpdf(x, mean, var).unwrap();
    let closed = -0.5 * (2.0 * std::f64::consts::PI * var).ln() - (x - mean).powi(2) / (2.0 * var);
    let f = |m: f64| gaussian_logpdf(x, m, var).unwrap().0;
    let num = (f(mean + FD_STEP) - f(mean - FD_STEP)) / (2.0 * FD_STEP);
    rel_err(lp, closed, lp).max(rel_err(d, num, lp))
}

fn oracle_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Cross-entropy through a softmax, differentiated both with respect to the
/// probabilities and, via the hybrid supervised step, to the logits.
pub fn softmax_ce_gradient_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let labels = r.gen_range(2..=5);
    let target = r.gen_range(0..labels);
    let logits: Vec<f64> = (0..labels).map(|_| r.gen_range(-3.0..3.0)).collect();
    let onehot = one_hot::<f64>(target, labels).unwrap();
    let ce = |z: &[f64]| cls_error(&oracle_softmax(z), &onehot).unwrap();

    // with respect to probabilities
    let probs = oracle_softmax(&logits);
    let gp = cls_error_grad(&probs, &onehot).unwrap();
    let mut worst: f64 = 0.0;
    for j in 0..labels {
        let f = |d: f64| {
            let mut p = probs.clone();
            p[j] += d;
            cls_error(&p, &onehot).unwrap()
        };
        worst = worst.max(rel_err(gp[j], (f(FD_STEP) - f(-FD_STEP)) / (2.0 * FD_STEP), f(0.0)));
    }

    // with respect to logits, through the policy's supervised gradient
    let config = PolicyConfig {
        num_classes: labels - 1,
        hidden: 2,
        layers: 1,
        feature_dim: 1,
        ..PolicyConfig::default()
    };
    let policy = Policy::<f64>::new(config, seed).unwrap();
    let out = HeadOutput {
        center: 0.5,
        width: 0.5,
        logits: logits.clone(),
        probs,
        xi_mean: 0.5,
    };
    let target = seqdet::policy::StepTarget { label: target, segment: None };
    let mut loss = LossConfig::<f64>::default();
    loss.weights.lambda_c = 1.0;
    let (value, g) = policy.supervised_step(&out, &target, &loss).unwrap();
    worst = worst.max(rel_err(value, ce(&logits), value));
    for j in 0..labels {
        let mut up = logits.clone();
        up[j] += FD_STEP;
        let mut down = logits.clone();
        down[j] -= FD_STEP;
        worst = worst.max(rel_err(g.d_logits[j], (ce(&up) - ce(&down)) / (2.0 * FD_STEP), value));
    }
    worst
}

/// Tiny policy, one video, one frozen stochastic trajectory.
pub struct FrozenEpisode {
    pub policy: Policy<f64>,
    pub video: LabeledVideo<f64>,
    pub traj: TrajectoryRecord<f64>,
    pub baseline: BaselineEstimate<f64>,
    pub config: TrainConfig,
}

pub fn frozen_episode(seed: u64, mode: TrainingMode) -> FrozenEpisode {
    let mut r = rng(seed ^ 0x5eed);
    let spec = SyntheticSpec {
        num_videos: 1,
        frames_per_video: 40,
        feature_dim: r.gen_range(1..=3),
        num_classes: r.gen_range(1..=3),
        min_segment_frames: 5,
        max_segment_frames: 12,
        ..SyntheticSpec::default()
    };
    let video = generate_dataset::<f64>(&spec, seed).unwrap().remove(0);
    let config = PolicyConfig {
        steps: r.gen_range(1..=5),
        hidden: r.gen_range(1..=8),
        layers: r.gen_range(1..=2),
        mode,
        num_classes: spec.num_classes,
        neighborhood: 5,
        feature_dim: spec.feature_dim,
        ..PolicyConfig::default()
    };
    let mut policy = Policy::<f64>::new(config, seed).unwrap();
    for i in 0..policy.params().num_scalars() {
        let v = policy.params().flat_get(i) + r.gen_range(-0.3..0.3);
        policy.params_mut().flat_set(i, v);
    }
    let tc = TrainConfig {
        discount: r.gen_range(0.5..=1.0),
        ..TrainConfig::default()
    };
    let loss = tc.loss;
    let traj = policy
        .rollout(&video.video, &video.gts, &loss, RolloutMode::Stochastic, &mut r)
        .unwrap();
    let baseline = BaselineEstimate {
        per_step: (0..policy.config().steps).map(|_| r.gen_range(-0.3..0.3)).collect(),
        std_err: vec![0.0; policy.config().steps],
        samples: 1,
    };
    FrozenEpisode {
        policy,
        video,
        traj,
        baseline,
        config: tc,
    }
}

/// The surrogate whose gradient the trainer follows, recomputed from scratch
/// for a frozen trajectory: `-1/N sum_t log pi(nu_t) (R_t - b_t)`, plus the
/// supervised head term in hybrid mode.
pub fn frozen_surrogate(ep: &FrozenEpisode, params: &ParamSet<f64>, batch: usize) -> f64 {
    let mut p = ep.policy.clone();
    *p.params_mut() = params.clone();
    let outs = p.replay(&ep.traj).unwrap();
    let tau = ep.config.discount;
    let rewards = ep.traj.rewards();
    let n = batch as f64;
    let targets = p.step_targets(&ep.traj, &ep.video.gts);
    let mut total = 0.0;
    for (t, (out, step)) in outs.iter().zip(&ep.traj.steps).enumerate() {
        let ret: f64 = rewards[t..].iter().enumerate().map(|(k, r)| tau.powi(k as i32) * r).sum();
        let lp = p.action_logdensity(out, &step.action).unwrap();
        total -= lp * (ret - ep.baseline.per_step[t]) / n;
        if p.config().mode == TrainingMode::Hybrid {
            total += p.supervised_step(out, &targets[t], &ep.config.loss).unwrap().0 / n;
        }
    }
    total
}

pub fn frozen_trajectory_gradient_error(seed: u64, mode: TrainingMode) -> f64 {
    let ep = frozen_episode(seed, mode);
    let batch = 3;
    let (grads, value) = trajectory_head_grads(
        &ep.policy,
        &ep.traj,
        &ep.video,
        &ep.baseline,
        ep.config.discount,
        &ep.config.loss,
        batch,
    )
    .unwrap();
    let mut tape = GradTape::zeros_like(ep.policy.params());
    ep.policy.backward(&ep.traj, &grads, &mut tape).unwrap();
    let recomputed = frozen_surrogate(&ep, ep.policy.params(), batch);
    rel_err(value, recomputed, value).max(check_params(ep.policy.params(), &tape, |p| frozen_surrogate(&ep, p, batch)))
}

/// Worst error over all gradient checks for one seed.
pub fn all_gradient_errors(seed: u64) -> [(&'static str, f64); 6] {
    [
        ("lstm", lstm_gradient_error(seed)),
        ("heads", heads_gradient_error(seed)),
        ("gaussian", gaussian_gradient_error(seed)),
        ("softmax-ce", softmax_ce_gradient_error(seed)),
        ("surrogate-pure", frozen_trajectory_gradient_error(seed, TrainingMode::PureScoreFunction)),
        ("surrogate-hybrid", frozen_trajectory_gradient_error(seed, TrainingMode::Hybrid)),
    ]
}

// ---------------------------------------------------------------------------
// episodes

/// Sum of rewards minus `L(empty) - L(M_T)` for one random stochastic episode
/// with `tau = 1`.
pub fn telescoping_gap(seed: u64) -> f64 {
    let mut r = rng(seed);
    let mode = if r.gen_bool(0.5) {
        TrainingMode::Hybrid
    } else {
        TrainingMode::PureScoreFunction
    };
    let spec = SyntheticSpec {
        num_videos: 1,
        frames_per_video: r.gen_range(60..=100),
        feature_dim: 4,
        num_classes: r.gen_range(1..=3),
        min_segment_frames: 5,
        max_segment_frames: 20,
        max_segments: 3,
        ..SyntheticSpec::default()
    };
    let lv = generate_dataset::<f64>(&spec, seed).unwrap().remove(0);
    let config = PolicyConfig {
        steps: r.gen_range(1..=12),
        hidden: 8,
        mode,
        num_classes: spec.num_classes,
        feature_dim: spec.feature_dim,
        ..PolicyConfig::default()
    };
    let policy = Policy::<f64>::new(config, seed).unwrap();
    let loss = LossConfig::<f64>::default();
    let traj = policy.rollout(&lv.video, &lv.gts, &loss, RolloutMode::Stochastic, &mut r).unwrap();
    let empty = seqdet::losses::total_loss(&[], &lv.gts, &loss).unwrap().total;
    let end = seqdet::losses::total_loss(&traj.detections, &lv.gts, &loss).unwrap().total;
    let sum = seqdet::envsim::discounted_return(&traj.rewards(), 1.0);
    (sum - (empty - end)).abs()
}

pub fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}
