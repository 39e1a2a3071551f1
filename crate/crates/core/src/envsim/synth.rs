use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::video::{FeatureVideo, LabeledVideo};
use crate::error::{Error, Result};
use crate::rng::{stream, tag};
use crate::scalar::Scalar;
use crate::segmetrics::{GroundTruthSegment, GroundTruthSet, Segment};

/// Parameters of the planted-segment generator. Frames inside a class-`c`
/// segment are prototype `c` plus Gaussian noise; all other frames use the
/// background prototype 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_videos: usize,
    pub frames_per_video: usize,
    pub feature_dim: usize,
    /// Foreground classes `K`; labels run `1..=K`.
    pub num_classes: usize,
    pub min_segments: usize,
    pub max_segments: usize,
    pub min_segment_frames: usize,
    pub max_segment_frames: usize,
    pub noise_level: f64,
    pub prototype_seed: u64,
    pub diff_channel: bool,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_videos: 250,
            frames_per_video: 100,
            feature_dim: 16,
            num_classes: 3,
            min_segments: 1,
            max_segments: 2,
            min_segment_frames: 15,
            max_segment_frames: 30,
            noise_level: 0.5,
            prototype_seed: 0,
            diff_channel: true,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.num_classes < 1 {
            return bad("num_classes must be >= 1");
        }
        if self.feature_dim == 0 || self.frames_per_video < 2 {
            return bad("need feature_dim >= 1 and frames_per_video >= 2");
        }
        if self.min_segments > self.max_segments || self.min_segment_frames > self.max_segment_frames {
            return bad("segment ranges must satisfy min <= max");
        }
        if self.min_segment_frames == 0 {
            return bad("min_segment_frames must be >= 1");
        }
        if !(self.noise_level >= 0.0) || !self.noise_level.is_finite() {
            return bad("noise_level must be finite and >= 0");
        }
        if self.max_segments * self.max_segment_frames > self.frames_per_video {
            return Err(Error::SegmentsDoNotFit(format!(
                "{} segments of up to {} frames in {} frames",
                self.max_segments, self.max_segment_frames, self.frames_per_video
            )));
        }
        Ok(())
    }

    /// Class prototypes, row 0 is background.
    pub fn prototypes(&self) -> Vec<Vec<f64>> {
        let mut rng = stream(self.prototype_seed, &[tag::PROTOTYPES]);
        (0..=self.num_classes)
            .map(|_| {
                (0..self.feature_dim)
                    .map(|_| StandardNormal.sample(&mut rng))
                    .collect()
            })
            .collect()
    }
}

/// Generates `spec.num_videos` labeled videos. Deterministic in `(spec, seed)`.
pub fn generate_dataset<S: Scalar>(spec: &SyntheticSpec, seed: u64) -> Result<Vec<LabeledVideo<S>>> {
    spec.validate()?;
    let protos = spec.prototypes();
    (0..spec.num_videos)
        .map(|v| generate_video(spec, &protos, seed, v))
        .collect()
}

fn generate_video<S: Scalar>(
    spec: &SyntheticSpec,
    protos: &[Vec<f64>],
    seed: u64,
    index: usize,
) -> Result<LabeledVideo<S>> {
    let mut rng = stream(seed, &[tag::DATA, index as u64]);
    let frames = spec.frames_per_video;
    let count = rng.gen_range(spec.min_segments..=spec.max_segments);
    let lengths: Vec<usize> = (0..count)
        .map(|_| rng.gen_range(spec.min_segment_frames..=spec.max_segment_frames))
        .collect();
    let used: usize = lengths.iter().sum();
    let free = frames.checked_sub(used).ok_or_else(|| {
        Error::SegmentsDoNotFit(format!("{used} planted frames exceed {frames}"))
    })?;
    // Split the free frames into count+1 gaps via sorted cut points.
    let mut cuts: Vec<usize> = (0..count).map(|_| rng.gen_range(0..=free)).collect();
    cuts.sort_unstable();

    let mut labels = vec![0usize; frames];
    let mut items = Vec::with_capacity(count);
    let mut cursor = 0;
    let mut prev_cut = 0;
    for (&len, &cut) in lengths.iter().zip(&cuts) {
        cursor += cut - prev_cut;
        prev_cut = cut;
        let label = rng.gen_range(1..=spec.num_classes);
        labels[cursor..cursor + len].iter_mut().for_each(|l| *l = label);
        let f = frames as f64;
        items.push(GroundTruthSegment {
            segment: Segment::new(S::lit(cursor as f64 / f), S::lit((cursor + len) as f64 / f))?,
            label,
        });
        cursor += len;
    }

    let mut data = Vec::with_capacity(frames * spec.feature_dim);
    for &label in &labels {
        for &p in &protos[label] {
            let noise: f64 = StandardNormal.sample(&mut rng);
            data.push(S::lit(p + spec.noise_level * noise));
        }
    }
    let mut video = FeatureVideo::new(format!("synth-{index:05}"), spec.feature_dim, data)?;
    if spec.diff_channel {
        video = video.with_diff_channel();
    }
    Ok(LabeledVideo {
        video,
        gts: GroundTruthSet::new(items)?,
    })
}
