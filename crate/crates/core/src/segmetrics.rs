//! Temporal segments, IoU, ground-truth assignment and average precision.
//!
//! Two ranking modes exist for AP. [`RankingMode::Overlap`] ranks the
//! detections of a class by their best overlap with ground truth; it is the
//! variant used inside the training loss. [`RankingMode::Confidence`] ranks by
//! the detection's class probability, which is the usual benchmark protocol.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{argmax, Scalar};

/// IoU thresholds reported by default during evaluation.
pub const DEFAULT_EVAL_THRESHOLDS: [f64; 5] = [0.3, 0.4, 0.5, 0.6, 0.7];

/// Tolerance on `class_probs` summing to one.
const PROB_SUM_TOL: f64 = 1e-6;

/// A closed interval of normalized time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment<S> {
    start: S,
    end: S,
}

impl<S: Scalar> Segment<S> {
    pub fn new(start: S, end: S) -> Result<Self> {
        if !(start.is_finite() && end.is_finite())
            || start < S::zero()
            || end > S::one()
            || start > end
        {
            return Err(Error::InvalidSegment {
                start: start.as_f64(),
                end: end.as_f64(),
            });
        }
        Ok(Self { start, end })
    }

    /// Builds `[c - w/2, c + w/2]` clipped to `[0, 1]`. A negative width is
    /// treated as zero.
    pub fn from_center_width(center: S, width: S) -> Self {
        let half = width.max(S::zero()) / S::lit(2.0);
        let c = center.max(S::zero()).min(S::one());
        let start = (c - half).max(S::zero());
        let end = (c + half).min(S::one());
        Self { start, end }
    }

    #[inline]
    pub fn start(&self) -> S {
        self.start
    }

    #[inline]
    pub fn end(&self) -> S {
        self.end
    }

    #[inline]
    pub fn length(&self) -> S {
        self.end - self.start
    }

    pub fn intersection(&self, other: &Self) -> S {
        let lo = self.start.max(other.start);
        let hi = self.end.min(other.end);
        (hi - lo).max(S::zero())
    }

    pub fn cast<T: Scalar>(&self) -> Segment<T> {
        Segment {
            start: T::lit(self.start.as_f64()),
            end: T::lit(self.end.as_f64()),
        }
    }
}

/// Temporal intersection over union.
///
/// Two zero-length segments have IoU 1 when they coincide and 0 otherwise.
pub fn iou<S: Scalar>(a: &Segment<S>, b: &Segment<S>) -> S {
    let inter = a.intersection(b);
    let union = a.length() + b.length() - inter;
    if union <= S::zero() {
        return if a.start == b.start && a.end == b.end {
            S::one()
        } else {
            S::zero()
        };
    }
    (inter / union).max(S::zero()).min(S::one())
}

/// A predicted segment with its class distribution. Index 0 is background.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection<S> {
    pub segment: Segment<S>,
    pub class_probs: Vec<S>,
    pub step_index: usize,
}

impl<S: Scalar> Detection<S> {
    pub fn new(segment: Segment<S>, class_probs: Vec<S>, step_index: usize) -> Result<Self> {
        if step_index < 1 {
            return Err(Error::Config("detection step_index must be >= 1".into()));
        }
        if class_probs.len() < 2 {
            return Err(Error::DimensionMismatch {
                context: "detection class_probs",
                expected: 2,
                actual: class_probs.len(),
            });
        }
        if class_probs.iter().any(|p| !p.is_finite() || *p < S::zero()) {
            return Err(Error::NonFinite("detection class_probs".into()));
        }
        let total: S = class_probs.iter().copied().sum();
        if (total.as_f64() - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::Config(format!(
                "detection class_probs sum to {total}, expected 1"
            )));
        }
        Ok(Self {
            segment,
            class_probs,
            step_index,
        })
    }

    /// Most probable class (ties go to the lowest index).
    pub fn label(&self) -> usize {
        argmax(&self.class_probs)
    }

    pub fn is_background(&self) -> bool {
        self.label() == 0
    }

    /// Probability assigned to the predicted label.
    pub fn confidence(&self) -> S {
        self.class_probs[self.label()]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthSegment<S> {
    pub segment: Segment<S>,
    pub label: usize,
}

/// Labeled reference segments of one video.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthSet<S> {
    items: Vec<GroundTruthSegment<S>>,
}

impl<S: Scalar> GroundTruthSet<S> {
    pub fn new(items: Vec<GroundTruthSegment<S>>) -> Result<Self> {
        if let Some(bad) = items.iter().find(|g| g.label == 0) {
            return Err(Error::Config(format!(
                "ground truth at [{}, {}] uses the background label",
                bad.segment.start(),
                bad.segment.end()
            )));
        }
        Ok(Self { items })
    }

    pub fn empty() -> Self {
        Self { items: Vec::new() }
    }

    pub fn items(&self) -> &[GroundTruthSegment<S>] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// True when no two items share positive-length time.
    pub fn is_disjoint(&self) -> bool {
        self.items.iter().enumerate().all(|(i, a)| {
            self.items[i + 1..]
                .iter()
                .all(|b| a.segment.intersection(&b.segment) <= S::zero())
        })
    }

    /// Sorted distinct labels.
    pub fn labels(&self) -> Vec<usize> {
        let mut labels: Vec<usize> = self.items.iter().map(|g| g.label).collect();
        labels.sort_unstable();
        labels.dedup();
        labels
    }

    pub fn max_iou(&self, segment: &Segment<S>) -> S {
        self.items
            .iter()
            .map(|g| iou(segment, &g.segment))
            .fold(S::zero(), |a, b| a.max(b))
    }
}

/// Index of the ground truth with the largest positive IoU; ties go to the
/// lowest index. `None` when nothing overlaps.
pub fn assign<S: Scalar>(segment: &Segment<S>, gts: &GroundTruthSet<S>) -> Option<usize> {
    let mut best: Option<(usize, S)> = None;
    for (i, g) in gts.items.iter().enumerate() {
        let v = iou(segment, &g.segment);
        if v > S::zero() && best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankingMode {
    Overlap,
    Confidence,
}

/// AP of one class. `class_absent` marks a zero caused by missing ground truth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassAp<S> {
    pub value: S,
    pub class_absent: bool,
}

/// AP with the overlap ranking used by the training loss, for a single video.
pub fn average_precision_overlap<S: Scalar>(
    dets: &[Detection<S>],
    gts: &GroundTruthSet<S>,
    class: usize,
    tau_iou: S,
) -> ClassAp<S> {
    average_precision(&[(dets, gts)], class, tau_iou, RankingMode::Overlap)
}

/// Non-interpolated AP of `class` pooled over several videos.
///
/// Only detections whose argmax label equals `class` take part. Ground truths
/// are claimed greedily in rank order, each at most once.
pub fn average_precision<S: Scalar>(
    videos: &[(&[Detection<S>], &GroundTruthSet<S>)],
    class: usize,
    tau_iou: S,
    mode: RankingMode,
) -> ClassAp<S> {
    let positives: usize = videos
        .iter()
        .map(|(_, g)| g.items.iter().filter(|x| x.label == class).count())
        .sum();
    if positives == 0 {
        return ClassAp {
            value: S::zero(),
            class_absent: true,
        };
    }

    // (video, detection, ranking key)
    let mut ranked: Vec<(usize, usize, S)> = Vec::new();
    for (v, (dets, gts)) in videos.iter().enumerate() {
        for (d, det) in dets.iter().enumerate() {
            if det.label() != class {
                continue;
            }
            let key = match mode {
                RankingMode::Overlap => gts.max_iou(&det.segment),
                RankingMode::Confidence => det.class_probs[class],
            };
            ranked.push((v, d, key));
        }
    }
    ranked.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap_or(Ordering::Equal));

    let mut claimed: Vec<Vec<bool>> = videos.iter().map(|(_, g)| vec![false; g.len()]).collect();
    let total = S::from_usize_lossy(positives);
    let mut tp = 0usize;
    let mut prev_recall = S::zero();
    let mut ap = S::zero();
    for (rank, &(v, d, _)) in ranked.iter().enumerate() {
        let (dets, gts) = videos[v];
        let hit = match mode {
            RankingMode::Overlap => match_assigned(&dets[d], gts, class, tau_iou, &claimed[v]),
            RankingMode::Confidence => match_best_unclaimed(&dets[d], gts, class, tau_iou, &claimed[v]),
        };
        if let Some(g) = hit {
            claimed[v][g] = true;
            tp += 1;
            let precision = S::from_usize_lossy(tp) / S::from_usize_lossy(rank + 1);
            let recall = S::from_usize_lossy(tp) / total;
            ap += precision * (recall - prev_recall);
            prev_recall = recall;
        }
    }
    ClassAp {
        value: ap,
        class_absent: false,
    }
}

fn match_assigned<S: Scalar>(
    det: &Detection<S>,
    gts: &GroundTruthSet<S>,
    class: usize,
    tau_iou: S,
    claimed: &[bool],
) -> Option<usize> {
    let g = assign(&det.segment, gts)?;
    let gt = &gts.items[g];
    (gt.label == class && iou(&det.segment, &gt.segment) >= tau_iou && !claimed[g]).then_some(g)
}

fn match_best_unclaimed<S: Scalar>(
    det: &Detection<S>,
    gts: &GroundTruthSet<S>,
    class: usize,
    tau_iou: S,
    claimed: &[bool],
) -> Option<usize> {
    let mut candidates: Vec<(usize, S)> = gts
        .items
        .iter()
        .enumerate()
        .filter(|(_, g)| g.label == class)
        .map(|(i, g)| (i, iou(&det.segment, &g.segment)))
        .filter(|&(_, v)| v >= tau_iou && v > S::zero())
        .collect();
    candidates.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal));
    candidates.into_iter().map(|(i, _)| i).find(|&i| !claimed[i])
}

/// Per-class AP over the classes present in ground truth, as `(class, ap)`.
pub fn per_class_ap<S: Scalar>(
    dets: &[Vec<Detection<S>>],
    gts: &[GroundTruthSet<S>],
    tau_iou: S,
    mode: RankingMode,
) -> Result<Vec<(usize, S)>> {
    if dets.len() != gts.len() {
        return Err(Error::DimensionMismatch {
            context: "detections per video vs ground truths per video",
            expected: gts.len(),
            actual: dets.len(),
        });
    }
    let mut classes: Vec<usize> = gts.iter().flat_map(|g| g.labels()).collect();
    classes.sort_unstable();
    classes.dedup();
    if classes.is_empty() {
        return Err(Error::EmptyGroundTruth);
    }
    let videos: Vec<(&[Detection<S>], &GroundTruthSet<S>)> =
        dets.iter().map(Vec::as_slice).zip(gts.iter()).collect();
    Ok(classes
        .into_iter()
        .map(|c| (c, average_precision(&videos, c, tau_iou, mode).value))
        .collect())
}

/// Unweighted mean of per-class AP over classes present in ground truth.
pub fn mean_ap<S: Scalar>(
    dets: &[Vec<Detection<S>>],
    gts: &[GroundTruthSet<S>],
    tau_iou: S,
    mode: RankingMode,
) -> Result<S> {
    let per_class = per_class_ap(dets, gts, tau_iou, mode)?;
    let n = S::from_usize_lossy(per_class.len());
    Ok(per_class.iter().map(|&(_, ap)| ap).sum::<S>() / n)
}

/// Single-video convenience wrapper around [`mean_ap`].
pub fn video_mean_ap<S: Scalar>(
    dets: &[Detection<S>],
    gts: &GroundTruthSet<S>,
    tau_iou: S,
    mode: RankingMode,
) -> Result<S> {
    let classes = gts.labels();
    if classes.is_empty() {
        return Err(Error::EmptyGroundTruth);
    }
    let n = S::from_usize_lossy(classes.len());
    Ok(classes
        .into_iter()
        .map(|c| average_precision(&[(dets, gts)], c, tau_iou, mode).value)
        .sum::<S>()
        / n)
}
