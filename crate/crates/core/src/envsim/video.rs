use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::segmetrics::{GroundTruthSet, Segment};

/// Per-frame feature vectors of one video, optionally with a frame-difference
/// channel (`diff[0] = 0`, `diff[i] = frame[i] - frame[i-1]`).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVideo<S> {
    pub id: String,
    num_frames: usize,
    dim: usize,
    frames: Vec<S>,
    diff: Option<Vec<S>>,
}

impl<S: Scalar> FeatureVideo<S> {
    /// `frames` holds `num_frames * dim` values, row-major.
    pub fn new(id: impl Into<String>, dim: usize, frames: Vec<S>) -> Result<Self> {
        if dim == 0 || frames.is_empty() || !frames.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch {
                context: "feature video rows",
                expected: dim,
                actual: frames.len(),
            });
        }
        if frames.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("video features".into()));
        }
        Ok(Self {
            id: id.into(),
            num_frames: frames.len() / dim,
            dim,
            frames,
            diff: None,
        })
    }

    /// Adds the frame-difference channel.
    pub fn with_diff_channel(mut self) -> Self {
        let mut diff = vec![S::zero(); self.frames.len()];
        for i in 1..self.num_frames {
            for k in 0..self.dim {
                diff[i * self.dim + k] = self.frames[i * self.dim + k] - self.frames[(i - 1) * self.dim + k];
            }
        }
        self.diff = Some(diff);
        self
    }

    pub fn without_diff_channel(mut self) -> Self {
        self.diff = None;
        self
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn feature_dim(&self) -> usize {
        self.dim
    }

    pub fn has_diff(&self) -> bool {
        self.diff.is_some()
    }

    pub fn frame(&self, i: usize) -> &[S] {
        &self.frames[i * self.dim..(i + 1) * self.dim]
    }

    pub fn diff(&self, i: usize) -> Option<&[S]> {
        self.diff.as_ref().map(|d| &d[i * self.dim..(i + 1) * self.dim])
    }

    pub fn frames_flat(&self) -> &[S] {
        &self.frames
    }

    /// Frame features, with the diff channel appended when present.
    pub fn frame_input(&self, i: usize) -> Vec<S> {
        let mut v = self.frame(i).to_vec();
        if let Some(d) = self.diff(i) {
            v.extend_from_slice(d);
        }
        v
    }

    /// Width of [`frame_input`](Self::frame_input).
    pub fn input_dim(&self) -> usize {
        if self.has_diff() {
            2 * self.dim
        } else {
            self.dim
        }
    }

    /// Mean of [`frame_input`](Self::frame_input) over frames `lo..=hi`.
    pub fn pooled(&self, lo: usize, hi: usize) -> Vec<S> {
        let mut acc = vec![S::zero(); self.input_dim()];
        for i in lo..=hi {
            for (a, v) in acc.iter_mut().zip(self.frame_input(i)) {
                *a += v;
            }
        }
        let n = S::from_usize_lossy(hi - lo + 1);
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }

    /// Normalized position of frame `i`, `i / (F - 1)`.
    pub fn normalized_position(&self, i: usize) -> S {
        if self.num_frames <= 1 {
            return S::zero();
        }
        S::from_usize_lossy(i) / S::from_usize_lossy(self.num_frames - 1)
    }

    /// Nearest frame to a normalized position, clamped to valid indices.
    pub fn frame_at(&self, xi: S) -> usize {
        let xi = if xi.is_finite() { xi.max(S::zero()).min(S::one()) } else { S::zero() };
        let idx = (xi * S::from_usize_lossy(self.num_frames - 1)).round();
        idx.to_usize().unwrap_or(0).min(self.num_frames - 1)
    }
}

/// Inclusive frame range covered by a normalized segment, where frame `i`
/// spans `[i/F, (i+1)/F)`.
pub fn frame_span<S: Scalar>(segment: &Segment<S>, num_frames: usize) -> (usize, usize) {
    let f = S::from_usize_lossy(num_frames);
    let last = num_frames.saturating_sub(1);
    let lo = (segment.start() * f).floor().to_usize().unwrap_or(0).min(last);
    let hi = (segment.end() * f).ceil().to_usize().unwrap_or(0).saturating_sub(1).min(last);
    (lo, hi.max(lo))
}

/// A video with its reference segments.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledVideo<S> {
    pub video: FeatureVideo<S>,
    pub gts: GroundTruthSet<S>,
}
