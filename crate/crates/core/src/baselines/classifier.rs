use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::nms::{nms_aggregate, NmsConfig};
use crate::diffkit::{adam_step, AdamConfig, AdamState, Dense, GradTape, Lstm, ParamSet};
use crate::envsim::{FeatureVideo, LabeledVideo};
use crate::error::{Error, Result};
use crate::losses::PROB_FLOOR;
use crate::rng::{stream, tag};
use crate::scalar::{argmax, softmax, Scalar};
use crate::segmetrics::{Detection, GroundTruthSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassifierVariant {
    /// One affine layer and a softmax per frame.
    Dense,
    /// Stacked LSTM over the frame sequence with a softmax per step.
    Lstm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub variant: ClassifierVariant,
    pub num_classes: usize,
    pub hidden: usize,
    pub layers: usize,
    pub epochs: usize,
    /// Videos per gradient step.
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            variant: ClassifierVariant::Dense,
            num_classes: 3,
            hidden: 32,
            layers: 2,
            epochs: 20,
            batch_size: 8,
            adam: AdamConfig {
                lr: 1e-2,
                ..AdamConfig::default()
            },
            seed: 0,
        }
    }
}

/// Per-frame labels: a frame takes the label of the segment containing its
/// normalized midpoint `(i + 0.5) / F`, background otherwise.
pub fn frame_labels<S: Scalar>(num_frames: usize, gts: &GroundTruthSet<S>) -> Vec<usize> {
    let f = S::from_usize_lossy(num_frames);
    (0..num_frames)
        .map(|i| {
            let mid = (S::from_usize_lossy(i) + S::lit(0.5)) / f;
            gts.items()
                .iter()
                .find(|g| g.segment.start() <= mid && mid <= g.segment.end())
                .map_or(0, |g| g.label)
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct FrameClassifier<S> {
    variant: ClassifierVariant,
    input_dim: usize,
    num_labels: usize,
    lstm: Option<Lstm>,
    out: Dense,
    params: ParamSet<S>,
}

struct Trace<S> {
    hidden: Vec<Vec<S>>,
    cache: Option<crate::diffkit::LstmCache<S>>,
    probs: Vec<Vec<S>>,
}

impl<S: Scalar> FrameClassifier<S> {
    /// Fresh weights for videos whose per-frame input width is `input_dim`.
    pub fn new(config: &ClassifierConfig, input_dim: usize) -> Result<Self> {
        if config.num_classes < 1 || input_dim == 0 {
            return Err(Error::Config("classifier needs K >= 1 and a non-empty input".into()));
        }
        let mut rng = stream(config.seed, &[tag::CLASSIFIER, tag::INIT]);
        let mut params = ParamSet::new();
        let num_labels = config.num_classes + 1;
        let (lstm, out) = match config.variant {
            ClassifierVariant::Dense => (None, Dense::register(&mut params, "cls.out", input_dim, num_labels, &mut rng)),
            ClassifierVariant::Lstm => {
                if config.hidden == 0 || config.layers == 0 {
                    return Err(Error::Config("lstm classifier needs hidden >= 1 and layers >= 1".into()));
                }
                let lstm = Lstm::register(&mut params, "cls.lstm", input_dim, config.hidden, config.layers, &mut rng);
                let out = Dense::register(&mut params, "cls.out", config.hidden, num_labels, &mut rng);
                (Some(lstm), out)
            }
        };
        Ok(Self {
            variant: config.variant,
            input_dim,
            num_labels,
            lstm,
            out,
            params,
        })
    }

    pub fn variant(&self) -> ClassifierVariant {
        self.variant
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// `K + 1`, background included.
    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn params(&self) -> &ParamSet<S> {
        &self.params
    }

    fn run(&self, video: &FeatureVideo<S>) -> Result<Trace<S>> {
        if video.input_dim() != self.input_dim {
            return Err(Error::DimensionMismatch {
                context: "classifier input width",
                expected: self.input_dim,
                actual: video.input_dim(),
            });
        }
        let inputs: Vec<Vec<S>> = (0..video.num_frames()).map(|i| video.frame_input(i)).collect();
        let (hidden, cache) = match &self.lstm {
            Some(lstm) => {
                let (hs, _, cache) = lstm.forward(&self.params, &inputs, &lstm.zero_state())?;
                (hs, Some(cache))
            }
            None => (inputs, None),
        };
        let probs = hidden.iter().map(|h| softmax(&self.out.forward(&self.params, h))).collect();
        Ok(Trace {
            hidden,
            cache,
            probs,
        })
    }

    /// Class distribution of every frame.
    pub fn predict(&self, video: &FeatureVideo<S>) -> Result<Vec<Vec<S>>> {
        Ok(self.run(video)?.probs)
    }

    /// Per-frame prediction followed by [`nms_aggregate`].
    pub fn detect(&self, video: &FeatureVideo<S>, nms: &NmsConfig) -> Result<Vec<Detection<S>>> {
        nms_aggregate(&self.predict(video)?, nms)
    }

    /// Mean cross-entropy over the frames of `video`; gradients scaled by
    /// `weight` are added to `tape`.
    fn accumulate(&self, lv: &LabeledVideo<S>, weight: S, tape: &mut GradTape<S>) -> Result<S> {
        let trace = self.run(&lv.video)?;
        let labels = frame_labels(lv.video.num_frames(), &lv.gts);
        let n = S::from_usize_lossy(labels.len().max(1));
        let floor = S::lit(PROB_FLOOR);
        let mut loss = S::zero();
        let mut dh = Vec::with_capacity(labels.len());
        for ((probs, h), &y) in trace.probs.iter().zip(&trace.hidden).zip(&labels) {
            loss -= probs[y].max(floor).ln() / n;
            let dlogits: Vec<S> = probs
                .iter()
                .enumerate()
                .map(|(j, &p)| weight * (p - if j == y { S::one() } else { S::zero() }) / n)
                .collect();
            dh.push(self.out.backward(&self.params, h, &dlogits, tape));
        }
        if let (Some(lstm), Some(cache)) = (&self.lstm, &trace.cache) {
            lstm.backward(&self.params, cache, &dh, tape)?;
        }
        Ok(loss)
    }

    /// Fraction of frames whose argmax matches the midpoint label.
    pub fn frame_accuracy(&self, data: &[LabeledVideo<S>]) -> Result<f64> {
        let (mut hit, mut total) = (0usize, 0usize);
        for lv in data {
            let probs = self.predict(&lv.video)?;
            for (p, y) in probs.iter().zip(frame_labels(lv.video.num_frames(), &lv.gts)) {
                hit += usize::from(argmax(p) == y);
                total += 1;
            }
        }
        Ok(if total == 0 { 0.0 } else { hit as f64 / total as f64 })
    }
}

/// Cross-entropy training with Adam. Returns the model and the mean
/// training loss of every epoch.
pub fn train_frame_classifier<S: Scalar>(
    data: &[LabeledVideo<S>],
    config: &ClassifierConfig,
) -> Result<(FrameClassifier<S>, Vec<f64>)> {
    let first = data
        .first()
        .ok_or_else(|| Error::Config("classifier training needs at least one video".into()))?;
    if config.batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    let mut model = FrameClassifier::new(config, first.video.input_dim())?;
    let mut adam = AdamState::new(&model.params, config.adam);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut rng = stream(config.seed, &[tag::CLASSIFIER, tag::SHUFFLE, epoch as u64]);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let mut tape = GradTape::zeros_like(&model.params);
            let w = S::one() / S::from_usize_lossy(chunk.len());
            for &i in chunk {
                epoch_loss += model.accumulate(&data[i], w, &mut tape)?.as_f64() / data.len() as f64;
            }
            adam_step(&mut model.params, &tape, &mut adam)?;
        }
        if !epoch_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                reason: "classifier loss is not finite".into(),
            });
        }
        history.push(epoch_loss);
    }
    Ok((model, history))
}
