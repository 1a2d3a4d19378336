use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::seed::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SamplingMode {
    #[default]
    WithoutReplacement,
    WithReplacement,
}

impl fmt::Display for SamplingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SamplingMode::WithoutReplacement => "without_replacement",
            SamplingMode::WithReplacement => "with_replacement",
        })
    }
}

impl FromStr for SamplingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "without_replacement" => Ok(SamplingMode::WithoutReplacement),
            "with_replacement" => Ok(SamplingMode::WithReplacement),
            other => Err(Error::InvalidArgument(format!(
                "unknown sampling mode {other:?} (expected without_replacement or with_replacement)"
            ))),
        }
    }
}

/// How one temporal view of a video is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplingPlan {
    /// Frames per view (`y`).
    pub frames_per_view: usize,
    pub mode: SamplingMode,
    pub seed: u64,
}

/// Draw `plan.frames_per_view` frame indices from `0..frame_count`, ascending.
///
/// The result is a pure function of `(seed, draw_id, frame_count, y, mode)`;
/// `draw_id` selects an independent stream so that two views of one video
/// differ. In without-replacement mode a clip shorter than `y` yields every
/// index once, padded with repeats of the last index.
pub fn sample_indices(frame_count: usize, plan: &SamplingPlan, draw_id: u64) -> Result<Vec<usize>> {
    let y = plan.frames_per_view;
    if y == 0 {
        return Err(Error::InvalidArgument(
            "frames per view must be positive".into(),
        ));
    }
    if frame_count == 0 {
        return Err(Error::InvalidArgument(
            "cannot sample from an empty video".into(),
        ));
    }
    let mut rng = rng_for(plan.seed, draw_id);
    let mut indices = match plan.mode {
        SamplingMode::WithReplacement => (0..y).map(|_| rng.random_range(0..frame_count)).collect(),
        SamplingMode::WithoutReplacement if y >= frame_count => {
            let mut all: Vec<usize> = (0..frame_count).collect();
            all.resize(y, frame_count - 1);
            all
        }
        SamplingMode::WithoutReplacement => {
            rand::seq::index::sample(&mut rng, frame_count, y).into_vec()
        }
    };
    indices.sort_unstable();
    Ok(indices)
}
