//! Budget-aware sequential temporal segment detection.
//!
//! A recurrent policy looks at a handful of frames of a long feature stream
//! and emits labeled temporal segments. It is trained with a recurrent policy
//! gradient whose reward is the decrease of a composite classification,
//! localization and mAP-based retrieval loss.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the crate root fix the common `f64` instantiations.

pub mod baselines;
pub mod diffkit;
pub mod envsim;
pub mod error;
pub mod harness;
pub mod losses;
pub mod policy;
pub mod rng;
pub mod scalar;
pub mod segmetrics;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Segment = segmetrics::Segment<f64>;
pub type Detection = segmetrics::Detection<f64>;
pub type GroundTruthSet = segmetrics::GroundTruthSet<f64>;
pub type LabeledVideo = envsim::LabeledVideo<f64>;
pub type FeatureVideo = envsim::FeatureVideo<f64>;
pub type Policy = policy::Policy<f64>;
pub type ParamSet = diffkit::ParamSet<f64>;
pub type LossConfig = losses::LossConfig<f64>;

pub type Segment32 = segmetrics::Segment<f32>;
pub type Detection32 = segmetrics::Detection<f32>;
pub type LabeledVideo32 = envsim::LabeledVideo<f32>;
pub type Policy32 = policy::Policy<f32>;
pub type ParamSet32 = diffkit::ParamSet<f32>;
