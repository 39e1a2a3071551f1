use std::fmt::Write as _;

use crate::envsim::LabeledVideo;
use crate::error::Result;
use crate::losses::LossConfig;
use crate::policy::{Policy, RolloutMode};
use crate::rng::stream;
use crate::scalar::Scalar;

/// Human-readable listing of one deterministic episode: where the policy
/// looked, what it predicted and the reward it earned at every step.
pub fn trace_text<S: Scalar>(policy: &Policy<S>, lv: &LabeledVideo<S>, loss: &LossConfig<S>) -> Result<String> {
    let mut unused = stream(0, &[]);
    let traj = policy.rollout(&lv.video, &lv.gts, loss, RolloutMode::Deterministic, &mut unused)?;
    let f = lv.video.num_frames();
    let mut s = String::new();
    let _ = writeln!(s, "video {} ({} frames, T = {})", lv.video.id, f, traj.steps.len());
    for g in lv.gts.items() {
        let _ = writeln!(
            s,
            "  gt     [{:.3}, {:.3}] class {}",
            g.segment.start().as_f64(),
            g.segment.end().as_f64(),
            g.label
        );
    }
    for (t, st) in traj.steps.iter().enumerate() {
        let probs: Vec<String> = st.output.probs.iter().map(|p| format!("{:.3}", p.as_f64())).collect();
        let _ = writeln!(
            s,
            "  step {:>2} frame {:>4} segment [{:.3}, {:.3}] class {} {} probs [{}] next {:.3} reward {:+.4}",
            t + 1,
            st.frame,
            st.detection.segment.start().as_f64(),
            st.detection.segment.end().as_f64(),
            st.detection.label(),
            if st.kept { "kept   " } else { "dropped" },
            probs.join(", "),
            st.action.xi.as_f64(),
            st.reward.as_f64()
        );
    }
    let _ = writeln!(
        s,
        "  final loss {:.4} (cls {:.4}, loc {:.4}, ret {:.4}), {} detections",
        traj.loss.total.as_f64(),
        traj.loss.cls.as_f64(),
        traj.loss.loc.as_f64(),
        traj.loss.ret.as_f64(),
        traj.detections.len()
    );
    Ok(s)
}
