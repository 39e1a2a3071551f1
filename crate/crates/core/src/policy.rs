//! The recurrent detection policy.
//!
//! At each of `T` steps the policy observes the neighborhood of the current
//! frame, advances a stacked LSTM, and emits a segment `(center, width)`, a
//! class distribution over `K + 1` labels and the mean of the next position.
//! During training the next position is drawn from a Gaussian around that
//! mean. In [`TrainingMode::PureScoreFunction`] the class and the segment are
//! sampled too, so the reward depends on the parameters only through the
//! sampled actions.

use std::io::{Read, Write};

use rand::Rng;
use rayon::prelude::*;
use rand_distr::{Distribution, StandardNormal, WeightedIndex};
use serde::{Deserialize, Serialize};

use crate::diffkit::{
    gaussian_logpdf, read_checkpoint, write_checkpoint, GradTape, HeadGrads, HeadOutput, Heads,
    Lstm, LstmCache, ParamSet,
};
use crate::envsim::{
    observe, step_env, EnvConfig, EpisodeState, FeatureVideo, LabeledVideo, Observation, StepAction,
};
use crate::error::{Error, Result};
use crate::losses::{cls_error, loc_error_grad, loc_error_scaled, one_hot, LossBreakdown, LossConfig};
use crate::rng::{stream, tag};
use crate::scalar::{softmax, Scalar};
use crate::segmetrics::{assign, Detection, GroundTruthSet, Segment};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainingMode {
    /// Every output is sampled; gradients come from the score function only.
    PureScoreFunction,
    /// Only the next position is sampled; classification and localization
    /// terms are backpropagated directly through the heads.
    #[default]
    Hybrid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    /// Steps per episode, `T`.
    pub steps: usize,
    pub hidden: usize,
    pub layers: usize,
    /// Variance of the Gaussian over the next position.
    pub xi_variance: f64,
    /// Variance of the Gaussians over `(center, width)` in pure mode.
    pub loc_variance: f64,
    pub mode: TrainingMode,
    /// Foreground classes `K`.
    pub num_classes: usize,
    pub neighborhood: usize,
    pub feature_dim: usize,
    pub diff_channel: bool,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            steps: 6,
            hidden: 64,
            layers: 2,
            xi_variance: 0.18,
            loc_variance: 0.05,
            mode: TrainingMode::Hybrid,
            num_classes: 3,
            neighborhood: 15,
            feature_dim: 16,
            diff_channel: true,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.steps < 1 {
            return bad("steps must be >= 1");
        }
        if self.hidden < 1 || self.layers < 1 {
            return bad("hidden size and layer count must be >= 1");
        }
        if !(self.xi_variance > 0.0 && self.loc_variance > 0.0) {
            return bad("variances must be > 0");
        }
        if self.num_classes < 1 || self.feature_dim < 1 || self.neighborhood < 1 {
            return bad("num_classes, feature_dim and neighborhood must be >= 1");
        }
        Ok(())
    }

    /// `K + 1`.
    pub fn num_labels(&self) -> usize {
        self.num_classes + 1
    }

    pub fn video_input_dim(&self) -> usize {
        if self.diff_channel {
            2 * self.feature_dim
        } else {
            self.feature_dim
        }
    }

    pub fn observation_dim(&self) -> usize {
        self.neighborhood + self.num_labels() + 1 + self.video_input_dim()
    }

    pub fn env_config<S: Scalar>(&self, loss: LossConfig<S>) -> EnvConfig<S> {
        EnvConfig {
            neighborhood: self.neighborhood,
            num_labels: self.num_labels(),
            loss,
        }
    }
}

/// How the next position (and, in pure mode, class and segment) is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RolloutMode {
    /// Distribution means everywhere.
    Deterministic,
    /// Training-time sampling.
    Stochastic,
    /// Next position uniform in `[0, 1]`, heads deterministic.
    RandomSelection,
}

/// Actions drawn at one step. Raw draws are kept for the log-density.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledAction<S> {
    /// The Gaussian draw before clamping (equal to `xi` when not sampled).
    pub xi_raw: S,
    /// Position handed to the environment.
    pub xi: S,
    pub class: Option<usize>,
    pub center_raw: Option<S>,
    pub width_raw: Option<S>,
}

#[derive(Clone, Debug)]
pub struct StepRecord<S> {
    /// Frame observed at this step.
    pub frame: usize,
    pub observation: Observation<S>,
    pub input: Vec<S>,
    pub hidden: Vec<S>,
    pub output: HeadOutput<S>,
    pub action: SampledAction<S>,
    /// Proposed detection, including background-labelled ones.
    pub detection: Detection<S>,
    /// Whether the detection survived the background discard rule.
    pub kept: bool,
    pub log_density: S,
    pub reward: S,
}

#[derive(Clone, Debug)]
pub struct TrajectoryRecord<S> {
    pub steps: Vec<StepRecord<S>>,
    pub caches: LstmCache<S>,
    pub detections: Vec<Detection<S>>,
    pub loss: LossBreakdown<S>,
    pub mode: RolloutMode,
}

impl<S: Scalar> TrajectoryRecord<S> {
    pub fn rewards(&self) -> Vec<S> {
        self.steps.iter().map(|s| s.reward).collect()
    }
}

/// Supervision target of one step in hybrid mode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepTarget<S> {
    pub label: usize,
    /// Reference segment when the step's segment overlaps ground truth.
    pub segment: Option<Segment<S>>,
}

/// Network structure plus parameters.
#[derive(Clone, Debug)]
pub struct Policy<S> {
    config: PolicyConfig,
    lstm: Lstm,
    heads: Heads,
    params: ParamSet<S>,
}

impl<S: Scalar> Policy<S> {
    pub fn new(config: PolicyConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(seed, &[tag::INIT]);
        let mut params = ParamSet::new();
        let lstm = Lstm::register(
            &mut params,
            "policy.lstm",
            config.observation_dim(),
            config.hidden,
            config.layers,
            &mut rng,
        );
        let heads = Heads::register(&mut params, config.hidden, config.num_labels(), &mut rng);
        Ok(Self {
            config,
            lstm,
            heads,
            params,
        })
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<S> {
        &mut self.params
    }

    pub fn heads(&self) -> &Heads {
        &self.heads
    }

    /// Same network with a different horizon.
    pub fn with_steps(&self, steps: usize) -> Result<Self> {
        let mut p = self.clone();
        p.config.steps = steps;
        p.config.validate()?;
        Ok(p)
    }

    pub fn save<W: Write>(&self, w: W) -> Result<()> {
        let header = serde_json::to_value(&self.config)?;
        write_checkpoint(w, &header, &self.params)
    }

    pub fn load<R: Read>(r: R) -> Result<Self> {
        let (header, stored) = read_checkpoint::<S, _>(r)?;
        let config: PolicyConfig = serde_json::from_value(header)?;
        let mut policy = Self::new(config, 0)?;
        policy.params.load_from(&stored)?;
        Ok(policy)
    }

    fn check_video(&self, video: &FeatureVideo<S>) -> Result<()> {
        if video.input_dim() != self.config.video_input_dim() {
            return Err(Error::DimensionMismatch {
                context: "video input width (features plus diff channel)",
                expected: self.config.video_input_dim(),
                actual: video.input_dim(),
            });
        }
        Ok(())
    }

    /// Runs one episode of `config.steps` steps.
    pub fn rollout<R: Rng + ?Sized>(
        &self,
        video: &FeatureVideo<S>,
        gts: &GroundTruthSet<S>,
        loss: &LossConfig<S>,
        mode: RolloutMode,
        rng: &mut R,
    ) -> Result<TrajectoryRecord<S>> {
        self.check_video(video)?;
        let env = self.config.env_config(*loss);
        let mut state = EpisodeState::new(video, gts, self.config.steps, &env)?;
        let mut lstm_state = self.lstm.zero_state();
        let mut steps = Vec::with_capacity(self.config.steps);
        let mut caches = Vec::with_capacity(self.config.steps);
        for t in 1..=self.config.steps {
            let frame = state.current_frame;
            let observation = observe(video, &state, &env);
            let input = observation.to_vector();
            let (next, cache) = self.lstm.step(&self.params, &input, &lstm_state)?;
            lstm_state = next;
            let hidden = lstm_state.top().to_vec();
            let output = self.heads.forward(&self.params, &hidden);
            if !output_is_finite(&output) {
                return Err(Error::NonFinite(format!(
                    "policy outputs at step {t} of video {}",
                    video.id
                )));
            }
            let action = self.choose(&output, mode, rng);
            let detection = self.detection_from(&output, &action, t)?;
            let log_density = match mode {
                RolloutMode::Stochastic => self.action_logdensity(&output, &action)?,
                _ => S::zero(),
            };
            let kept = !detection.is_background();
            let reward = step_env(
                video,
                gts,
                &mut state,
                StepAction {
                    detection: detection.clone(),
                    next_xi: action.xi,
                },
                &env,
            )?;
            caches.push(cache);
            steps.push(StepRecord {
                frame,
                observation,
                input,
                hidden,
                output,
                action,
                detection,
                kept,
                log_density,
                reward,
            });
        }
        Ok(TrajectoryRecord {
            steps,
            caches,
            detections: state.detections,
            loss: state.prev_loss,
            mode,
        })
    }

    /// Deterministic inference: the non-background detections of one episode.
    pub fn detect(&self, video: &FeatureVideo<S>) -> Result<Vec<Detection<S>>> {
        let mut unused = stream(0, &[]);
        let traj = self.rollout(
            video,
            &GroundTruthSet::empty(),
            &LossConfig::default(),
            RolloutMode::Deterministic,
            &mut unused,
        )?;
        Ok(traj.detections)
    }

    /// [`detect`](Self::detect) over many videos, in parallel, order preserved.
    pub fn detect_all(&self, data: &[LabeledVideo<S>]) -> Result<Vec<Vec<Detection<S>>>> {
        data.par_iter().map(|lv| self.detect(&lv.video)).collect()
    }

    /// Same heads, next position drawn uniformly at random.
    pub fn detect_random_selection<R: Rng + ?Sized>(
        &self,
        video: &FeatureVideo<S>,
        rng: &mut R,
    ) -> Result<Vec<Detection<S>>> {
        let traj = self.rollout(
            video,
            &GroundTruthSet::empty(),
            &LossConfig::default(),
            RolloutMode::RandomSelection,
            rng,
        )?;
        Ok(traj.detections)
    }

    fn choose<R: Rng + ?Sized>(&self, out: &HeadOutput<S>, mode: RolloutMode, rng: &mut R) -> SampledAction<S> {
        let clamp01 = |x: S| x.max(S::zero()).min(S::one());
        match mode {
            RolloutMode::Deterministic => SampledAction {
                xi_raw: out.xi_mean,
                xi: out.xi_mean,
                class: None,
                center_raw: None,
                width_raw: None,
            },
            RolloutMode::RandomSelection => {
                let xi = S::lit(rng.gen_range(0.0..=1.0));
                SampledAction {
                    xi_raw: xi,
                    xi,
                    class: None,
                    center_raw: None,
                    width_raw: None,
                }
            }
            RolloutMode::Stochastic => {
                let mut gauss = |mean: S, var: f64| {
                    let z: f64 = StandardNormal.sample(rng);
                    mean + S::lit(var.sqrt() * z)
                };
                let xi_raw = gauss(out.xi_mean, self.config.xi_variance);
                let mut action = SampledAction {
                    xi_raw,
                    xi: clamp01(xi_raw),
                    class: None,
                    center_raw: None,
                    width_raw: None,
                };
                if self.config.mode == TrainingMode::PureScoreFunction {
                    action.center_raw = Some(gauss(out.center, self.config.loc_variance));
                    action.width_raw = Some(gauss(out.width, self.config.loc_variance));
                    let weights: Vec<f64> = out.probs.iter().map(|p| p.as_f64()).collect();
                    action.class = Some(
                        WeightedIndex::new(&weights)
                            .map(|d| d.sample(rng))
                            .unwrap_or(0),
                    );
                }
                action
            }
        }
    }

    fn detection_from(&self, out: &HeadOutput<S>, action: &SampledAction<S>, step: usize) -> Result<Detection<S>> {
        match (action.class, action.center_raw, action.width_raw) {
            (Some(class), Some(c), Some(w)) => Detection::new(
                Segment::from_center_width(c, w),
                one_hot(class, self.config.num_labels())?,
                step,
            ),
            _ => Detection::new(
                Segment::from_center_width(out.center, out.width),
                renormalized(&out.probs),
                step,
            ),
        }
    }

    /// `log pi(nu_t | h_{t-1}, o_t)` of the sampled actions.
    ///
    /// The Gaussian over the next position is evaluated at the raw draw; the
    /// clamping applied afterwards is not reflected in the density.
    pub fn action_logdensity(&self, out: &HeadOutput<S>, action: &SampledAction<S>) -> Result<S> {
        let (mut lp, _) = gaussian_logpdf(action.xi_raw, out.xi_mean, S::lit(self.config.xi_variance))?;
        if self.config.mode == TrainingMode::PureScoreFunction {
            let lv = S::lit(self.config.loc_variance);
            if let (Some(k), Some(c), Some(w)) = (action.class, action.center_raw, action.width_raw) {
                let floor = S::lit(crate::losses::PROB_FLOOR);
                lp += out.probs[k].max(floor).ln();
                lp += gaussian_logpdf(c, out.center, lv)?.0;
                lp += gaussian_logpdf(w, out.width, lv)?.0;
            }
        }
        Ok(lp)
    }

    /// Gradient of [`action_logdensity`](Self::action_logdensity) with respect to the head outputs.
    pub fn logdensity_grads(&self, out: &HeadOutput<S>, action: &SampledAction<S>) -> Result<HeadGrads<S>> {
        let mut g = HeadGrads::zeros(self.config.num_labels());
        g.d_xi_mean = gaussian_logpdf(action.xi_raw, out.xi_mean, S::lit(self.config.xi_variance))?.1;
        if self.config.mode == TrainingMode::PureScoreFunction {
            let lv = S::lit(self.config.loc_variance);
            if let (Some(k), Some(c), Some(w)) = (action.class, action.center_raw, action.width_raw) {
                for (j, d) in g.d_logits.iter_mut().enumerate() {
                    let indicator = if j == k { S::one() } else { S::zero() };
                    *d = indicator - out.probs[j];
                }
                g.d_center = gaussian_logpdf(c, out.center, lv)?.1;
                g.d_width = gaussian_logpdf(w, out.width, lv)?.1;
            }
        }
        Ok(g)
    }

    /// Per-step targets for the hybrid supervised term. A step overlapping a
    /// ground truth not yet claimed by an earlier kept detection is pulled
    /// toward that ground truth; repeats and misses are pulled toward
    /// background, since discarding them is what minimizes the episode loss.
    /// Repeats keep their location target.
    pub fn step_targets(&self, traj: &TrajectoryRecord<S>, gts: &GroundTruthSet<S>) -> Vec<StepTarget<S>> {
        let mut claimed = vec![false; gts.len()];
        traj.steps
            .iter()
            .map(|s| match assign(&s.detection.segment, gts) {
                Some(g) => {
                    let label = if claimed[g] { 0 } else { gts.items()[g].label };
                    if s.kept {
                        claimed[g] = true;
                    }
                    StepTarget { label, segment: Some(gts.items()[g].segment) }
                }
                None => StepTarget { label: 0, segment: None },
            })
            .collect()
    }

    /// `lambda_c * cls + lambda_l * loc` of one step's outputs against its
    /// target, and the gradient with respect to the head outputs.
    pub fn supervised_step(
        &self,
        out: &HeadOutput<S>,
        target: &StepTarget<S>,
        loss: &LossConfig<S>,
    ) -> Result<(S, HeadGrads<S>)> {
        let w = &loss.weights;
        let mut g = HeadGrads::zeros(self.config.num_labels());
        let onehot = one_hot(target.label, self.config.num_labels())?;
        let mut value = w.lambda_c * cls_error(&out.probs, &onehot)?;
        for (j, d) in g.d_logits.iter_mut().enumerate() {
            *d = w.lambda_c * (out.probs[j] - onehot[j]);
        }
        if let Some(gt) = target.segment {
            let seg = Segment::from_center_width(out.center, out.width);
            value += w.lambda_l * loc_error_scaled(&seg, &gt, loss.scaling)?;
            let (ds, de) = loc_error_grad(&seg, &gt, loss.scaling)?;
            let half = S::lit(0.5);
            let start_free = out.center - out.width * half > S::zero();
            let end_free = out.center + out.width * half < S::one();
            let (ds, de) = (
                if start_free { ds } else { S::zero() },
                if end_free { de } else { S::zero() },
            );
            g.d_center = w.lambda_l * (ds + de);
            g.d_width = w.lambda_l * (de - ds) * half;
        }
        Ok((value, g))
    }

    /// Recomputes head outputs along a recorded trajectory with the current
    /// parameters, feeding the recorded observations.
    pub fn replay(&self, traj: &TrajectoryRecord<S>) -> Result<Vec<HeadOutput<S>>> {
        let inputs: Vec<Vec<S>> = traj.steps.iter().map(|s| s.input.clone()).collect();
        let (hs, _, _) = self.lstm.forward(&self.params, &inputs, &self.lstm.zero_state())?;
        Ok(hs.iter().map(|h| self.heads.forward(&self.params, h)).collect())
    }

    /// Backpropagates per-step head-output gradients through the heads and
    /// the LSTM, accumulating into `tape`.
    pub fn backward(&self, traj: &TrajectoryRecord<S>, grads: &[HeadGrads<S>], tape: &mut GradTape<S>) -> Result<()> {
        if grads.len() != traj.steps.len() {
            return Err(Error::DimensionMismatch {
                context: "per-step head gradients",
                expected: traj.steps.len(),
                actual: grads.len(),
            });
        }
        let dh: Vec<Vec<S>> = traj
            .steps
            .iter()
            .zip(grads)
            .map(|(s, g)| self.heads.backward(&self.params, &s.hidden, &s.output, g, tape))
            .collect();
        self.lstm.backward(&self.params, &traj.caches, &dh, tape)?;
        Ok(())
    }
}

fn output_is_finite<S: Scalar>(out: &HeadOutput<S>) -> bool {
    out.center.is_finite()
        && out.width.is_finite()
        && out.xi_mean.is_finite()
        && out.probs.iter().all(|p| p.is_finite())
}

/// Softmax output renormalized in case of rounding drift (f32).
fn renormalized<S: Scalar>(probs: &[S]) -> Vec<S> {
    let total: S = probs.iter().copied().sum();
    if (total - S::one()).abs() <= S::epsilon() * S::lit(4.0) {
        probs.to_vec()
    } else {
        let logs: Vec<S> = probs.iter().map(|p| p.max(S::min_positive_value()).ln()).collect();
        softmax(&logs)
    }
}
