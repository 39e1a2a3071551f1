use serde::{Deserialize, Serialize};

use super::video::{frame_span, FeatureVideo};
use crate::error::{Error, Result};
use crate::losses::{total_loss, LossBreakdown, LossConfig};
use crate::scalar::Scalar;
use crate::segmetrics::{Detection, GroundTruthSet};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig<S> {
    /// Frames observed around each selected frame (odd values are centered).
    pub neighborhood: usize,
    /// Labels including background, `K + 1`.
    pub num_labels: usize,
    pub loss: LossConfig<S>,
}

impl<S: Scalar> EnvConfig<S> {
    pub fn new(num_labels: usize) -> Self {
        Self {
            neighborhood: 15,
            num_labels,
            loss: LossConfig::default(),
        }
    }

    /// Width of [`Observation::to_vector`] for a video of the given input width.
    pub fn observation_dim(&self, video_input_dim: usize) -> usize {
        self.neighborhood + self.num_labels + 1 + video_input_dim
    }
}

/// What the agent sees at one step.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation<S> {
    /// Which neighborhood frames have been selected so far; 0 past the video ends.
    pub psi: Vec<S>,
    /// Mean class distribution of detections touching the neighborhood, or zeros.
    pub phi: Vec<S>,
    /// Normalized position of the current frame.
    pub xi: S,
    /// Mean frame input (features, plus diff channel if present) over the neighborhood.
    pub features: Vec<S>,
}

impl<S: Scalar> Observation<S> {
    pub fn to_vector(&self) -> Vec<S> {
        let mut v = Vec::with_capacity(self.psi.len() + self.phi.len() + 1 + self.features.len());
        v.extend_from_slice(&self.psi);
        v.extend_from_slice(&self.phi);
        v.push(self.xi);
        v.extend_from_slice(&self.features);
        v
    }
}

/// Per-episode bookkeeping.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeState<S> {
    pub current_frame: usize,
    pub selected_mask: Vec<bool>,
    /// Non-background detections emitted so far.
    pub detections: Vec<Detection<S>>,
    /// Steps taken, `0..=horizon`.
    pub step: usize,
    pub horizon: usize,
    /// Loss of `detections`.
    pub prev_loss: LossBreakdown<S>,
}

impl<S: Scalar> EpisodeState<S> {
    /// Starts at the middle frame with nothing detected.
    pub fn new(
        video: &FeatureVideo<S>,
        gts: &GroundTruthSet<S>,
        horizon: usize,
        config: &EnvConfig<S>,
    ) -> Result<Self> {
        Self::starting_at(video, gts, horizon, config, video.frame_at(S::lit(0.5)))
    }

    pub fn starting_at(
        video: &FeatureVideo<S>,
        gts: &GroundTruthSet<S>,
        horizon: usize,
        config: &EnvConfig<S>,
        frame: usize,
    ) -> Result<Self> {
        if horizon < 1 {
            return Err(Error::Config("episode horizon must be >= 1".into()));
        }
        let mut selected_mask = vec![false; video.num_frames()];
        let current_frame = frame.min(video.num_frames() - 1);
        selected_mask[current_frame] = true;
        Ok(Self {
            current_frame,
            selected_mask,
            detections: Vec::new(),
            step: 0,
            horizon,
            prev_loss: total_loss(&[], gts, &config.loss)?,
        })
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.horizon
    }
}

/// Builds the observation at the current frame.
pub fn observe<S: Scalar>(
    video: &FeatureVideo<S>,
    state: &EpisodeState<S>,
    config: &EnvConfig<S>,
) -> Observation<S> {
    let n = video.num_frames() as isize;
    let size = config.neighborhood.max(1);
    let half = (size / 2) as isize;
    let center = state.current_frame as isize;
    let first = center - half;
    let psi: Vec<S> = (0..size as isize)
        .map(|j| {
            let f = first + j;
            if f >= 0 && f < n && state.selected_mask[f as usize] {
                S::one()
            } else {
                S::zero()
            }
        })
        .collect();
    let lo = first.max(0) as usize;
    let hi = (first + size as isize - 1).min(n - 1).max(lo as isize) as usize;

    let mut phi = vec![S::zero(); config.num_labels];
    let mut touching = 0usize;
    for d in &state.detections {
        let (dlo, dhi) = frame_span(&d.segment, video.num_frames());
        if dlo <= hi && dhi >= lo {
            touching += 1;
            for (p, &q) in phi.iter_mut().zip(&d.class_probs) {
                *p += q;
            }
        }
    }
    if touching > 0 {
        let k = S::from_usize_lossy(touching);
        phi.iter_mut().for_each(|p| *p /= k);
    }

    Observation {
        psi,
        phi,
        xi: video.normalized_position(state.current_frame),
        features: video.pooled(lo, hi),
    }
}

/// Output of one policy step as seen by the environment.
#[derive(Clone, Debug, PartialEq)]
pub struct StepAction<S> {
    pub detection: Detection<S>,
    /// Next observation position in normalized time; clamped to `[0, 1]`.
    pub next_xi: S,
}

/// Applies one step. Background-labelled detections are dropped. Returns the
/// reward `L(M_{t-1}) - L(M_t)`.
pub fn step_env<S: Scalar>(
    video: &FeatureVideo<S>,
    gts: &GroundTruthSet<S>,
    state: &mut EpisodeState<S>,
    action: StepAction<S>,
    config: &EnvConfig<S>,
) -> Result<S> {
    if state.is_done() {
        return Err(Error::Config(format!(
            "episode already finished after {} steps",
            state.horizon
        )));
    }
    let mut reward = S::zero();
    if !action.detection.is_background() {
        state.detections.push(action.detection);
        let loss = total_loss(&state.detections, gts, &config.loss)?;
        reward = state.prev_loss.total - loss.total;
        state.prev_loss = loss;
    }
    state.step += 1;
    state.current_frame = video.frame_at(action.next_xi);
    state.selected_mask[state.current_frame] = true;
    Ok(reward)
}

/// `sum_k tau^k r_{t+k}` over the given tail of rewards.
pub fn discounted_return<S: Scalar>(rewards: &[S], tau: S) -> S {
    rewards.iter().rev().fold(S::zero(), |acc, &r| r + tau * acc)
}

/// Discounted return from every step.
pub fn returns_to_go<S: Scalar>(rewards: &[S], tau: S) -> Vec<S> {
    let mut out = vec![S::zero(); rewards.len()];
    let mut acc = S::zero();
    for (t, &r) in rewards.iter().enumerate().rev() {
        acc = r + tau * acc;
        out[t] = acc;
    }
    out
}
