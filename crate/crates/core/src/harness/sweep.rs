use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::budget::{estimate_budget, BudgetCostModel};
use crate::envsim::LabeledVideo;
use crate::error::{Error, Result};
use crate::policy::{Policy, PolicyConfig};
use crate::scalar::Scalar;
use crate::segmetrics::{mean_ap, RankingMode};
use crate::trainer::{train, TrainConfig};

/// Where the policy for each `T` comes from.
#[derive(Clone, Copy, Debug)]
pub enum SweepMode<'a, S> {
    /// Train a fresh policy per `T` from `policy_seed`.
    Retrain { policy_seed: u64 },
    /// Run the given parameters with each `T`.
    Reuse(&'a Policy<S>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub steps: usize,
    /// Validation mAP at the sweep threshold, confidence ranking.
    pub map: f64,
    /// Best of the timed detection passes, per video.
    pub wall_ms_per_video: f64,
    pub budget_ms: f64,
}

#[derive(Clone, Debug)]
pub struct SweepConfig {
    pub tau_iou: f64,
    /// Timed detection passes per `T`; the fastest is reported.
    pub timing_repeats: usize,
    pub cost: BudgetCostModel,
    pub regression: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            tau_iou: 0.5,
            timing_repeats: 3,
            cost: BudgetCostModel::default(),
            regression: true,
        }
    }
}

/// mAP, measured time and estimated budget for every `T` in `steps`,
/// which must be strictly ascending.
pub fn steps_sweep<S: Scalar>(
    train_set: &[LabeledVideo<S>],
    val_set: &[LabeledVideo<S>],
    policy_config: &PolicyConfig,
    train_config: &TrainConfig,
    steps: &[usize],
    mode: SweepMode<'_, S>,
    sweep: &SweepConfig,
) -> Result<Vec<SweepRow>> {
    if steps.is_empty() || steps.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("sweep steps must be non-empty and strictly ascending".into()));
    }
    if val_set.is_empty() {
        return Err(Error::Config("sweep needs a validation set".into()));
    }
    let gts: Vec<_> = val_set.iter().map(|lv| lv.gts.clone()).collect();
    steps
        .iter()
        .map(|&t| {
            let policy = match mode {
                SweepMode::Retrain { policy_seed } => {
                    let init = Policy::new(PolicyConfig { steps: t, ..policy_config.clone() }, policy_seed)?;
                    train(&init, train_set, val_set, train_config, None)?.policy
                }
                SweepMode::Reuse(p) => p.with_steps(t)?,
            };
            let mut best = f64::INFINITY;
            let mut dets = Vec::new();
            for _ in 0..sweep.timing_repeats.max(1) {
                let started = Instant::now();
                dets = val_set
                    .iter()
                    .map(|lv| policy.detect(&lv.video))
                    .collect::<Result<Vec<_>>>()?;
                best = best.min(started.elapsed().as_secs_f64() * 1e3);
            }
            Ok(SweepRow {
                steps: t,
                map: mean_ap(&dets, &gts, S::lit(sweep.tau_iou), RankingMode::Confidence)?.as_f64(),
                wall_ms_per_video: best / val_set.len() as f64,
                budget_ms: estimate_budget(&sweep.cost, t, sweep.regression)?,
            })
        })
        .collect()
}

/// Tab-separated table with a header line, ready for plotting.
pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut s = String::from("steps\tmap\twall_ms_per_video\tbudget_ms\n");
    for r in rows {
        let _ = writeln!(s, "{}\t{:.6}\t{:.6}\t{:.1}", r.steps, r.map, r.wall_ms_per_video, r.budget_ms);
    }
    s
}
