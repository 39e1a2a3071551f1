use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::envsim::LabeledVideo;
use crate::error::Result;
use crate::policy::Policy;
use crate::scalar::Scalar;
use crate::segmetrics::{per_class_ap, Detection, GroundTruthSet, RankingMode};

/// AP of one class at every evaluated threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassRow {
    pub class: usize,
    /// Ground-truth segments of this class.
    pub positives: usize,
    pub detections: usize,
    /// `(iou threshold, AP)`.
    pub ap: Vec<(f64, f64)>,
}

/// Confidence-ranked evaluation of one detector on one dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub steps: Option<usize>,
    pub videos: usize,
    pub detections: usize,
    /// `(iou threshold, mAP)`.
    pub map: Vec<(f64, f64)>,
    pub per_class: Vec<ClassRow>,
    pub wall_ms_per_video: f64,
}

impl EvalReport {
    pub fn map_at(&self, threshold: f64) -> Option<f64> {
        self.map
            .iter()
            .find(|(t, _)| (t - threshold).abs() < 1e-9)
            .map(|&(_, m)| m)
    }

    /// Equality ignoring wall time.
    pub fn same_outcome(&self, other: &Self) -> bool {
        Self {
            wall_ms_per_video: 0.0,
            ..self.clone()
        } == Self {
            wall_ms_per_video: 0.0,
            ..other.clone()
        }
    }

    /// Fixed-width text table: one mAP row, then one row per class.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = write!(s, "{:<12}", "IoU");
        for (t, _) in &self.map {
            let _ = write!(s, "{t:>8.2}");
        }
        s.push('\n');
        let _ = write!(s, "{:<12}", "mAP");
        for (_, m) in &self.map {
            let _ = write!(s, "{m:>8.4}");
        }
        s.push('\n');
        for row in &self.per_class {
            let _ = write!(s, "{:<12}", format!("class {}", row.class));
            for (_, ap) in &row.ap {
                let _ = write!(s, "{ap:>8.4}");
            }
            s.push('\n');
        }
        let _ = writeln!(
            s,
            "videos {}  detections {}  steps {}  wall {:.3} ms/video",
            self.videos,
            self.detections,
            self.steps.map_or_else(|| "-".to_string(), |t| t.to_string()),
            self.wall_ms_per_video
        );
        s
    }
}

/// Scores precomputed detections.
pub fn evaluate_detections<S: Scalar>(
    detections: &[Vec<Detection<S>>],
    gts: &[GroundTruthSet<S>],
    thresholds: &[f64],
    steps: Option<usize>,
    wall_ms_per_video: f64,
) -> Result<EvalReport> {
    let mut map = Vec::with_capacity(thresholds.len());
    let mut per_class: Vec<ClassRow> = Vec::new();
    for &t in thresholds {
        let aps = per_class_ap(detections, gts, S::lit(t), RankingMode::Confidence)?;
        let mean = aps.iter().map(|(_, ap)| ap.as_f64()).sum::<f64>() / aps.len() as f64;
        map.push((t, mean));
        for (class, ap) in aps {
            match per_class.iter_mut().find(|r| r.class == class) {
                Some(row) => row.ap.push((t, ap.as_f64())),
                None => per_class.push(ClassRow {
                    class,
                    positives: gts.iter().map(|g| g.items().iter().filter(|x| x.label == class).count()).sum(),
                    detections: detections.iter().flatten().filter(|d| d.label() == class).count(),
                    ap: vec![(t, ap.as_f64())],
                }),
            }
        }
    }
    per_class.sort_by_key(|r| r.class);
    Ok(EvalReport {
        steps,
        videos: detections.len(),
        detections: detections.iter().map(Vec::len).sum(),
        map,
        per_class,
        wall_ms_per_video,
    })
}

/// Runs deterministic detection on every video and scores it.
pub fn evaluate<S: Scalar>(policy: &Policy<S>, data: &[LabeledVideo<S>], thresholds: &[f64]) -> Result<EvalReport> {
    let started = Instant::now();
    let detections = policy.detect_all(data)?;
    let wall = started.elapsed().as_secs_f64() * 1e3 / data.len().max(1) as f64;
    let gts: Vec<_> = data.iter().map(|lv| lv.gts.clone()).collect();
    evaluate_detections(&detections, &gts, thresholds, Some(policy.config().steps), wall)
}
