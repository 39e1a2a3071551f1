use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{argmax, Scalar};
use crate::segmetrics::{iou, Detection, Segment};

/// Thresholds for turning per-frame probabilities into segments.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NmsConfig {
    /// A frame joins a class run when its probability reaches this value.
    pub prob_threshold: f64,
    /// Candidates overlapping a kept one at or above this IoU are dropped.
    pub iou_threshold: f64,
}

impl Default for NmsConfig {
    fn default() -> Self {
        Self {
            prob_threshold: 0.5,
            iou_threshold: 0.4,
        }
    }
}

/// Greedy 1-D suppression: visits candidates by descending score and keeps
/// those whose IoU with every kept segment stays below `iou_threshold`.
/// Returns kept indices in visiting order; ties keep input order.
pub fn suppress<S: Scalar>(candidates: &[(Segment<S>, S)], iou_threshold: S) -> Vec<usize> {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        candidates[b]
            .1
            .partial_cmp(&candidates[a].1)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept
            .iter()
            .all(|&k| iou(&candidates[i].0, &candidates[k].0) < iou_threshold)
        {
            kept.push(i);
        }
    }
    kept
}

/// Per-frame class probabilities to detections.
///
/// For every non-background class, frames at or above the probability
/// threshold are merged into maximal runs. A run spans `[lo/F, (hi+1)/F]`,
/// is scored by its mean probability for the class, and carries the mean
/// probability row as its distribution. Runs whose mean row has a different
/// argmax are dropped so the detection's label is the run's class. Each
/// class is then suppressed independently.
pub fn nms_aggregate<S: Scalar>(probs: &[Vec<S>], config: &NmsConfig) -> Result<Vec<Detection<S>>> {
    let Some(first) = probs.first() else {
        return Ok(Vec::new());
    };
    let labels = first.len();
    if let Some(row) = probs.iter().find(|r| r.len() != labels) {
        return Err(Error::DimensionMismatch {
            context: "per-frame probability row",
            expected: labels,
            actual: row.len(),
        });
    }
    let f = S::from_usize_lossy(probs.len());
    let threshold = S::lit(config.prob_threshold);
    let mut out = Vec::new();
    for class in 1..labels {
        let mut candidates: Vec<(Segment<S>, S, Vec<S>)> = Vec::new();
        let mut i = 0;
        while i < probs.len() {
            if probs[i][class] < threshold {
                i += 1;
                continue;
            }
            let lo = i;
            while i < probs.len() && probs[i][class] >= threshold {
                i += 1;
            }
            let len = S::from_usize_lossy(i - lo);
            let mut mean = vec![S::zero(); labels];
            for row in &probs[lo..i] {
                for (m, &p) in mean.iter_mut().zip(row) {
                    *m += p / len;
                }
            }
            if argmax(&mean) != class {
                continue;
            }
            let segment = Segment::new(S::from_usize_lossy(lo) / f, S::from_usize_lossy(i) / f)?;
            candidates.push((segment, mean[class], mean));
        }
        let scored: Vec<(Segment<S>, S)> = candidates.iter().map(|(s, sc, _)| (*s, *sc)).collect();
        for k in suppress(&scored, S::lit(config.iou_threshold)) {
            let (segment, _, mean) = candidates[k].clone();
            out.push(Detection::new(segment, renormalize(mean), 1)?);
        }
    }
    Ok(out)
}

fn renormalize<S: Scalar>(mut v: Vec<S>) -> Vec<S> {
    let total: S = v.iter().copied().sum();
    if total > S::zero() {
        v.iter_mut().for_each(|x| *x /= total);
    }
    v
}
