//! Composite detection loss: classification, length-scaled localization and
//! an mAP-based retrieval term.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::segmetrics::{assign, video_mean_ap, Detection, GroundTruthSet, RankingMode, Segment};

/// Probabilities are floored here before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights<S> {
    pub lambda_c: S,
    pub lambda_l: S,
    pub lambda_r: S,
}

impl<S: Scalar> Default for LossWeights<S> {
    fn default() -> Self {
        Self {
            lambda_c: S::one(),
            lambda_l: S::one(),
            lambda_r: S::lit(0.5),
        }
    }
}

impl<S: Scalar> LossWeights<S> {
    pub fn validate(&self) -> Result<()> {
        if [self.lambda_c, self.lambda_l, self.lambda_r]
            .iter()
            .any(|w| !w.is_finite() || *w < S::zero())
        {
            return Err(Error::Config("loss weights must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// How the localization error is scaled by the reference segment length.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LengthScaling {
    /// Multiply by `1 / (g_e - g_s)`.
    #[default]
    InverseLength,
    /// Plain mean absolute boundary error.
    Unscaled,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig<S> {
    pub weights: LossWeights<S>,
    /// IoU threshold of the retrieval term.
    pub tau_iou: S,
    pub scaling: LengthScaling,
}

impl<S: Scalar> Default for LossConfig<S> {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            tau_iou: S::lit(0.5),
            scaling: LengthScaling::InverseLength,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown<S> {
    pub cls: S,
    pub loc: S,
    pub ret: S,
    pub total: S,
}

/// Cross-entropy `-sum c_g log c_m`.
pub fn cls_error<S: Scalar>(c_m: &[S], c_g: &[S]) -> Result<S> {
    check_dims(c_m, c_g)?;
    let floor = S::lit(PROB_FLOOR);
    Ok(-c_m
        .iter()
        .zip(c_g)
        .map(|(&p, &q)| q * p.max(floor).ln())
        .sum::<S>())
}

/// Derivative of [`cls_error`] with respect to each entry of `c_m`.
pub fn cls_error_grad<S: Scalar>(c_m: &[S], c_g: &[S]) -> Result<Vec<S>> {
    check_dims(c_m, c_g)?;
    let floor = S::lit(PROB_FLOOR);
    Ok(c_m
        .iter()
        .zip(c_g)
        .map(|(&p, &q)| if p > floor { -q / p } else { S::zero() })
        .collect())
}

fn check_dims<S>(c_m: &[S], c_g: &[S]) -> Result<()> {
    if c_m.len() != c_g.len() {
        return Err(Error::DimensionMismatch {
            context: "cross-entropy",
            expected: c_g.len(),
            actual: c_m.len(),
        });
    }
    Ok(())
}

fn length_scale<S: Scalar>(l_g: &Segment<S>, scaling: LengthScaling) -> Result<S> {
    let len = l_g.length();
    if len <= S::zero() {
        return Err(Error::ZeroLengthGroundTruth);
    }
    Ok(match scaling {
        LengthScaling::InverseLength => S::one() / len,
        LengthScaling::Unscaled => S::one(),
    })
}

/// `zeta(g) * (|m_s - g_s| + |m_e - g_e|) / 2` with `zeta(g) = 1 / len(g)`.
pub fn loc_error<S: Scalar>(l_m: &Segment<S>, l_g: &Segment<S>) -> Result<S> {
    loc_error_scaled(l_m, l_g, LengthScaling::InverseLength)
}

pub fn loc_error_scaled<S: Scalar>(
    l_m: &Segment<S>,
    l_g: &Segment<S>,
    scaling: LengthScaling,
) -> Result<S> {
    let zeta = length_scale(l_g, scaling)?;
    let dist = ((l_m.start() - l_g.start()).abs() + (l_m.end() - l_g.end()).abs()) / S::lit(2.0);
    Ok(zeta * dist)
}

/// Derivative of the localization error with respect to `(m_s, m_e)`.
/// The kink at zero error uses subgradient 0.
pub fn loc_error_grad<S: Scalar>(
    l_m: &Segment<S>,
    l_g: &Segment<S>,
    scaling: LengthScaling,
) -> Result<(S, S)> {
    let half_zeta = length_scale(l_g, scaling)? / S::lit(2.0);
    let sign = |x: S| {
        if x > S::zero() {
            S::one()
        } else if x < S::zero() {
            -S::one()
        } else {
            S::zero()
        }
    };
    Ok((
        half_zeta * sign(l_m.start() - l_g.start()),
        half_zeta * sign(l_m.end() - l_g.end()),
    ))
}

/// `1 - mAP` with overlap ranking. An empty detection set scores 1.
pub fn retrieval_error<S: Scalar>(
    dets: &[Detection<S>],
    gts: &GroundTruthSet<S>,
    tau_iou: S,
) -> Result<S> {
    if dets.is_empty() {
        return Ok(S::one());
    }
    Ok(S::one() - video_mean_ap(dets, gts, tau_iou, RankingMode::Overlap)?)
}

/// Loss of a detection set against one video's ground truth.
///
/// Background-labelled detections are ignored. Classification and
/// localization terms are summed over detections that overlap some ground
/// truth. With no ground truth the retrieval term is 0.
pub fn total_loss<S: Scalar>(
    dets: &[Detection<S>],
    gts: &GroundTruthSet<S>,
    config: &LossConfig<S>,
) -> Result<LossBreakdown<S>> {
    let kept: Vec<Detection<S>> = dets.iter().filter(|d| !d.is_background()).cloned().collect();
    let mut cls = S::zero();
    let mut loc = S::zero();
    for d in &kept {
        if let Some(g) = assign(&d.segment, gts) {
            let gt = &gts.items()[g];
            let onehot = one_hot(gt.label, d.class_probs.len())?;
            cls += cls_error(&d.class_probs, &onehot)?;
            loc += loc_error_scaled(&d.segment, &gt.segment, config.scaling)?;
        }
    }
    let ret = if gts.is_empty() {
        S::zero()
    } else {
        retrieval_error(&kept, gts, config.tau_iou)?
    };
    let w = &config.weights;
    Ok(LossBreakdown {
        cls,
        loc,
        ret,
        total: w.lambda_c * cls + w.lambda_l * loc + w.lambda_r * ret,
    })
}

pub fn one_hot<S: Scalar>(label: usize, len: usize) -> Result<Vec<S>> {
    if label >= len {
        return Err(Error::DimensionMismatch {
            context: "one-hot label",
            expected: len,
            actual: label,
        });
    }
    let mut v = vec![S::zero(); len];
    v[label] = S::one();
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmetrics::GroundTruthSegment;

    fn seg(s: f64, e: f64) -> Segment<f64> {
        Segment::new(s, e).unwrap()
    }

    #[test]
    fn cls_error_examples() {
        let oh = one_hot::<f64>(2, 4).unwrap();
        assert!(cls_error(&oh, &oh).unwrap() <= 1e-11);
        let uniform = [0.25; 4];
        assert!((cls_error(&uniform, &oh).unwrap() - 4f64.ln()).abs() < 1e-12);
        let c = [0.7, 0.2, 0.1];
        assert!((cls_error(&c, &one_hot(0, 3).unwrap()).unwrap() + 0.7f64.ln()).abs() < 1e-12);
        assert!(cls_error(&c, &[1.0, 0.0]).is_err());
    }

    #[test]
    fn cls_error_is_finite_at_zero_probability() {
        let v = cls_error(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert!((v + PROB_FLOOR.ln()).abs() < 1e-9);
    }

    #[test]
    fn loc_error_examples() {
        assert_eq!(loc_error(&seg(0.2, 0.4), &seg(0.2, 0.4)).unwrap(), 0.0);
        assert!((loc_error(&seg(0.1, 0.5), &seg(0.0, 0.5)).unwrap() - 0.1).abs() < 1e-12);
        assert!((loc_error(&seg(0.1, 0.1), &seg(0.0, 0.1)).unwrap() - 0.5).abs() < 1e-12);
        assert!(matches!(
            loc_error(&seg(0.1, 0.2), &seg(0.3, 0.3)),
            Err(Error::ZeroLengthGroundTruth)
        ));
    }

    #[test]
    fn loc_error_scales_inversely_with_length() {
        let long = loc_error(&seg(0.1, 0.5), &seg(0.0, 0.5)).unwrap();
        let short = loc_error(&seg(0.1, 0.1), &seg(0.0, 0.1)).unwrap();
        assert!((short / long - 5.0).abs() < 1e-9);
        let flat = loc_error_scaled(&seg(0.1, 0.5), &seg(0.0, 0.5), LengthScaling::Unscaled).unwrap();
        assert!((flat - 0.05).abs() < 1e-12);
    }

    #[test]
    fn total_loss_of_empty_set_is_weighted_retrieval() {
        let g = GroundTruthSet::new(vec![GroundTruthSegment { segment: seg(0.1, 0.3), label: 1 }]).unwrap();
        let b = total_loss(&[], &g, &LossConfig::default()).unwrap();
        assert_eq!((b.cls, b.loc, b.ret, b.total), (0.0, 0.0, 1.0, 0.5));
    }

    #[test]
    fn total_loss_without_ground_truth_has_no_retrieval_term() {
        let d = Detection::new(seg(0.1, 0.3), vec![0.2, 0.8], 1).unwrap();
        let b = total_loss(&[d], &GroundTruthSet::empty(), &LossConfig::default()).unwrap();
        assert_eq!(b.total, 0.0);
    }

    #[test]
    fn negative_weights_rejected() {
        let w = LossWeights { lambda_c: 1.0, lambda_l: -0.1, lambda_r: 0.5 };
        assert!(w.validate().is_err());
        assert!(LossWeights::<f64>::default().validate().is_ok());
    }
}
