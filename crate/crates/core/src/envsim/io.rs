//! Dataset files: JSON Lines, one video per line.
//!
//! ```text
//! {"id":"synth-00000","num_frames":100,"feature_dim":16,
//!  "features":[f_0_0, ..., f_0_15, f_1_0, ...],
//!  "gts":[[start, end, label], ...]}
//! ```
//!
//! `features` holds `num_frames * feature_dim` values, row-major. Segment
//! bounds are normalized to `[0, 1]` and labels start at 1. The same format
//! accepts features extracted by external tools.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::video::{FeatureVideo, LabeledVideo};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::segmetrics::{GroundTruthSegment, GroundTruthSet, Segment};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub id: String,
    pub num_frames: usize,
    pub feature_dim: usize,
    pub features: Vec<f64>,
    pub gts: Vec<(f64, f64, usize)>,
}

impl VideoRecord {
    pub fn from_labeled<S: Scalar>(lv: &LabeledVideo<S>) -> Self {
        Self {
            id: lv.video.id.clone(),
            num_frames: lv.video.num_frames(),
            feature_dim: lv.video.feature_dim(),
            features: lv.video.frames_flat().iter().map(|x| x.as_f64()).collect(),
            gts: lv
                .gts
                .items()
                .iter()
                .map(|g| (g.segment.start().as_f64(), g.segment.end().as_f64(), g.label))
                .collect(),
        }
    }

    pub fn into_labeled<S: Scalar>(self, diff_channel: bool, line: usize) -> Result<LabeledVideo<S>> {
        let err = |reason: String| Error::Dataset { line, reason };
        if self.num_frames * self.feature_dim != self.features.len() {
            return Err(err(format!(
                "expected {} x {} features, found {}",
                self.num_frames,
                self.feature_dim,
                self.features.len()
            )));
        }
        let mut video = FeatureVideo::new(
            self.id,
            self.feature_dim,
            self.features.into_iter().map(S::lit).collect(),
        )
        .map_err(|e| err(e.to_string()))?;
        if diff_channel {
            video = video.with_diff_channel();
        }
        let items = self
            .gts
            .into_iter()
            .map(|(s, e, label)| {
                Ok(GroundTruthSegment {
                    segment: Segment::new(S::lit(s), S::lit(e))?,
                    label,
                })
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|e| err(e.to_string()))?;
        let gts = GroundTruthSet::new(items).map_err(|e| err(e.to_string()))?;
        Ok(LabeledVideo { video, gts })
    }
}

pub fn write_dataset<S: Scalar, W: Write>(mut w: W, data: &[LabeledVideo<S>]) -> Result<()> {
    for lv in data {
        serde_json::to_writer(&mut w, &VideoRecord::from_labeled(lv))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset<S: Scalar, R: Read>(r: R, diff_channel: bool) -> Result<Vec<LabeledVideo<S>>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: VideoRecord = serde_json::from_str(&line).map_err(|e| Error::Dataset {
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(rec.into_labeled(diff_channel, i + 1)?);
    }
    Ok(out)
}

pub fn write_dataset_file<S: Scalar>(path: &Path, data: &[LabeledVideo<S>]) -> Result<()> {
    write_dataset(BufWriter::new(File::create(path)?), data)
}

pub fn read_dataset_file<S: Scalar>(path: &Path, diff_channel: bool) -> Result<Vec<LabeledVideo<S>>> {
    read_dataset(File::open(path)?, diff_channel)
}
