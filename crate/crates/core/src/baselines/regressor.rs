use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::envsim::{FeatureVideo, LabeledVideo};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::segmetrics::{assign, mean_ap, Detection, RankingMode, Segment};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressorConfig {
    /// Frames sampled per detection.
    pub kappa: usize,
    /// Ridge added to the normal equations.
    pub ridge: f64,
    /// Sampling window: the detection widened by this fraction of its
    /// length on each side, so frames just past either boundary are seen.
    pub context: f64,
}

impl Default for RegressorConfig {
    fn default() -> Self {
        Self {
            kappa: 10,
            ridge: 1e-6,
            context: 0.5,
        }
    }
}

/// Linear map from `[start, end, kappa sampled frame inputs]` to boundary
/// offsets `(d_start, d_end)`, with an intercept.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryRegressor {
    pub config: RegressorConfig,
    /// Width of one frame input (features plus diff channel).
    pub frame_dim: usize,
    /// Row-major `2 x (input_dim + 1)`; the last column is the intercept.
    pub weights: Vec<f64>,
}

impl BoundaryRegressor {
    /// All-zero weights: refinement is the identity.
    pub fn zeros(config: RegressorConfig, frame_dim: usize) -> Self {
        let cols = 2 + config.kappa * frame_dim + 1;
        Self {
            config,
            frame_dim,
            weights: vec![0.0; 2 * cols],
        }
    }

    /// `2 + kappa * frame_dim`.
    pub fn input_dim(&self) -> usize {
        2 + self.config.kappa * self.frame_dim
    }

    /// Regression input for one detection.
    pub fn features<S: Scalar>(&self, video: &FeatureVideo<S>, segment: &Segment<S>) -> Result<Vec<f64>> {
        if video.input_dim() != self.frame_dim {
            return Err(Error::DimensionMismatch {
                context: "regressor frame width",
                expected: self.frame_dim,
                actual: video.input_dim(),
            });
        }
        sample_features(video, segment, &self.config)
    }

    /// Predicted `(d_start, d_end)`.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let cols = self.input_dim() + 1;
        let row = |r: usize| {
            let w = &self.weights[r * cols..(r + 1) * cols];
            w[..cols - 1].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + w[cols - 1]
        };
        (row(0), row(1))
    }
}

fn sample_features<S: Scalar>(video: &FeatureVideo<S>, segment: &Segment<S>, config: &RegressorConfig) -> Result<Vec<f64>> {
    let (s, e) = (segment.start().as_f64(), segment.end().as_f64());
    let pad = config.context * (e - s);
    let (lo, hi) = ((s - pad).max(0.0), (e + pad).min(1.0));
    let frames = video.num_frames();
    let mut x = Vec::with_capacity(2 + config.kappa * video.input_dim());
    x.push(s);
    x.push(e);
    for j in 0..config.kappa {
        let pos = lo + (j as f64 + 0.5) / config.kappa as f64 * (hi - lo);
        let i = ((pos * frames as f64).floor() as usize).min(frames - 1);
        x.extend(video.frame_input(i).iter().map(|v| v.as_f64()));
    }
    Ok(x)
}

/// Solves `(X'X + ridge I) w = X'y` for each output column. `X` gets a
/// trailing column of ones.
pub fn solve_ridge(xs: &[Vec<f64>], ys: &[(f64, f64)], ridge: f64) -> Result<Vec<f64>> {
    let n = xs.len();
    let p = xs.first().map_or(0, Vec::len) + 1;
    if n == 0 || n != ys.len() {
        return Err(Error::Config("regression needs matching, non-empty inputs and targets".into()));
    }
    let x = DMatrix::from_fn(n, p, |r, c| if c + 1 == p { 1.0 } else { xs[r][c] });
    let mut gram = x.transpose() * &x;
    for d in 0..p {
        gram[(d, d)] += ridge;
    }
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::NonFinite("normal equations are not positive definite".into()))?;
    let mut weights = Vec::with_capacity(2 * p);
    for k in 0..2 {
        let y = DVector::from_fn(n, |r, _| if k == 0 { ys[r].0 } else { ys[r].1 });
        let w = chol.solve(&(x.transpose() * y));
        weights.extend(w.iter().copied());
    }
    Ok(weights)
}

/// Training pairs: every detection overlapping a ground truth, with the
/// offsets that would move it onto that ground truth.
pub fn collect_pairs<S: Scalar>(
    data: &[LabeledVideo<S>],
    detections: &[Vec<Detection<S>>],
    config: &RegressorConfig,
) -> Result<(Vec<Vec<f64>>, Vec<(f64, f64)>)> {
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (lv, dets) in data.iter().zip(detections) {
        for d in dets {
            if let Some(g) = assign(&d.segment, &lv.gts) {
                let gt = lv.gts.items()[g].segment;
                xs.push(sample_features(&lv.video, &d.segment, config)?);
                ys.push((
                    (gt.start() - d.segment.start()).as_f64(),
                    (gt.end() - d.segment.end()).as_f64(),
                ));
            }
        }
    }
    Ok((xs, ys))
}

/// Least-squares fit on detections matched to ground truth. With no
/// matched pairs the identity regressor is returned.
pub fn fit_regressor<S: Scalar>(
    data: &[LabeledVideo<S>],
    detections: &[Vec<Detection<S>>],
    config: &RegressorConfig,
) -> Result<BoundaryRegressor> {
    let frame_dim = data.first().map_or(0, |lv| lv.video.input_dim());
    let mut reg = BoundaryRegressor::zeros(*config, frame_dim);
    let (xs, ys) = collect_pairs(data, detections, config)?;
    if !xs.is_empty() {
        reg.weights = solve_ridge(&xs, &ys, config.ridge)?;
    }
    Ok(reg)
}

/// Moves each boundary by the predicted offset, clamps to `[0, 1]` and
/// collapses to the midpoint if the ends cross.
pub fn refine_boundaries<S: Scalar>(
    reg: &BoundaryRegressor,
    video: &FeatureVideo<S>,
    detections: &[Detection<S>],
) -> Result<Vec<Detection<S>>> {
    detections
        .iter()
        .map(|d| {
            let (ds, de) = reg.predict(&reg.features(video, &d.segment)?);
            let s = (d.segment.start().as_f64() + ds).clamp(0.0, 1.0);
            let e = (d.segment.end().as_f64() + de).clamp(0.0, 1.0);
            let (s, e) = if s <= e { (s, e) } else { ((s + e) / 2.0, (s + e) / 2.0) };
            let mut out = d.clone();
            out.segment = Segment::new(S::lit(s), S::lit(e))?;
            Ok(out)
        })
        .collect()
}

/// Mean absolute boundary error of detections against their assigned
/// ground truth, over matched detections only.
pub fn boundary_error<S: Scalar>(data: &[LabeledVideo<S>], detections: &[Vec<Detection<S>>]) -> Option<f64> {
    let (mut total, mut count) = (0.0, 0usize);
    for (lv, dets) in data.iter().zip(detections) {
        for d in dets {
            if let Some(g) = assign(&d.segment, &lv.gts) {
                let gt = lv.gts.items()[g].segment;
                total += ((gt.start() - d.segment.start()).abs() + (gt.end() - d.segment.end()).abs()).as_f64() / 2.0;
                count += 1;
            }
        }
    }
    (count > 0).then(|| total / count as f64)
}

/// One row of the kappa sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KappaRow {
    pub kappa: usize,
    pub map_unrefined: f64,
    pub map_refined: f64,
    pub train_error_unrefined: Option<f64>,
    pub train_error_refined: Option<f64>,
}

/// Fits one regressor per `kappa` on the training detections and reports
/// validation mAP (confidence ranking) before and after refinement.
pub fn kappa_sweep<S: Scalar>(
    train: (&[LabeledVideo<S>], &[Vec<Detection<S>>]),
    val: (&[LabeledVideo<S>], &[Vec<Detection<S>>]),
    kappas: &[usize],
    base: &RegressorConfig,
    tau_iou: f64,
) -> Result<Vec<KappaRow>> {
    let val_gts: Vec<_> = val.0.iter().map(|lv| lv.gts.clone()).collect();
    let map_unrefined = mean_ap(val.1, &val_gts, S::lit(tau_iou), RankingMode::Confidence)?.as_f64();
    let refine_all = |reg: &BoundaryRegressor, data: &[LabeledVideo<S>], dets: &[Vec<Detection<S>>]| {
        data.iter()
            .zip(dets)
            .map(|(lv, d)| refine_boundaries(reg, &lv.video, d))
            .collect::<Result<Vec<_>>>()
    };
    kappas
        .iter()
        .map(|&kappa| {
            let cfg = RegressorConfig { kappa, ..*base };
            let reg = fit_regressor(train.0, train.1, &cfg)?;
            let val_refined = refine_all(&reg, val.0, val.1)?;
            let train_refined = refine_all(&reg, train.0, train.1)?;
            Ok(KappaRow {
                kappa,
                map_unrefined,
                map_refined: mean_ap(&val_refined, &val_gts, S::lit(tau_iou), RankingMode::Confidence)?.as_f64(),
                train_error_unrefined: boundary_error(train.0, train.1),
                train_error_refined: boundary_error(train.0, &train_refined),
            })
        })
        .collect()
}
