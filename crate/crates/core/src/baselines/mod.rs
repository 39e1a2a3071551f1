//! Comparison systems: per-frame classifiers aggregated by non-maximum
//! suppression, and a linear boundary regressor that refines detections.

mod classifier;
mod nms;
mod regressor;

pub use classifier::{frame_labels, train_frame_classifier, ClassifierConfig, ClassifierVariant, FrameClassifier};
pub use nms::{nms_aggregate, suppress, NmsConfig};
pub use regressor::{
    boundary_error, collect_pairs, fit_regressor, kappa_sweep, refine_boundaries, solve_ridge, BoundaryRegressor,
    KappaRow, RegressorConfig,
};
