//! The partially observed detection environment: feature-stream videos,
//! synthetic data with planted segments, observations and rewards.

mod env;
mod io;
mod synth;
mod video;

pub use env::{
    discounted_return, observe, returns_to_go, step_env, EnvConfig, EpisodeState, Observation,
    StepAction,
};
pub use io::{read_dataset, read_dataset_file, write_dataset, write_dataset_file, VideoRecord};
pub use synth::{generate_dataset, SyntheticSpec};
pub use video::{frame_span, FeatureVideo, LabeledVideo};
