use std::collections::BTreeMap;

use ndarray::Array4;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::encoder::{images_to_tensor, Preprocess};
use crate::error::{Error, Result};
use crate::frame_pipeline::{aggregate_view, FrameSequence, GridLayout, SamplingPlan};
use crate::seed::{derive_seed, rng_for};

/// Resize every frame to the grid cell size once, up front.
pub fn prepare_dataset(
    videos: &[FrameSequence],
    layout: &GridLayout,
) -> Result<Vec<FrameSequence>> {
    videos
        .par_iter()
        .map(|v| {
            if v.dimensions() == (layout.cell_w, layout.cell_h) {
                Ok(v.clone())
            } else {
                v.resized(layout.cell_h, layout.cell_w)
            }
        })
        .collect()
}

/// Seeded per-class split; returns `(train, test)` indices in ascending order.
///
/// Every class with at least two videos contributes at least one to each side.
pub fn stratified_split(
    labels: &[usize],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction {train_fraction} not in (0, 1)"
        )));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (class, mut members) in by_class {
        let mut rng = rng_for(
            derive_seed(seed, &[b"split", &(class as u64).to_le_bytes()]),
            0,
        );
        members.shuffle(&mut rng);
        let n = members.len();
        let mut k = (train_fraction * n as f64).round() as usize;
        if n >= 2 {
            k = k.clamp(1, n - 1);
        } else {
            k = n;
        }
        train.extend_from_slice(&members[..k]);
        test.extend_from_slice(&members[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Shuffled partition of `0..n` into batches of `batch_size` videos.
///
/// A trailing batch of a single video has no negatives and is merged into
/// the previous batch.
pub fn epoch_batches(
    n: usize,
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Result<Vec<Vec<usize>>> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 training videos, got {n}"
        )));
    }
    if batch_size < 2 {
        return Err(Error::InvalidArgument(format!(
            "batch size must be at least 2, got {batch_size}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(
        derive_seed(seed, &[b"epoch", &(epoch as u64).to_le_bytes()]),
        0,
    ));
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let last = batches.pop().expect("non-empty");
        batches.last_mut().expect("non-empty").extend(last);
    }
    Ok(batches)
}

/// Stream id for one temporal view; depends only on the base seed, position
/// in training, video identity and view index.
pub fn view_draw_id(seed: u64, epoch: usize, step: usize, video_id: &str, view: u8) -> u64 {
    derive_seed(
        seed,
        &[
            b"view",
            &(epoch as u64).to_le_bytes(),
            &(step as u64).to_le_bytes(),
            video_id.as_bytes(),
            &[view],
        ],
    )
}

/// Two aggregated views per video, stacked as `[view 0 of all; view 1 of all]`.
#[derive(Debug, Clone)]
pub struct DualBatch {
    pub images: Array4<f64>,
    pub labels: Vec<usize>,
    pub video_ids: Vec<String>,
}

impl DualBatch {
    pub fn videos(&self) -> usize {
        self.labels.len()
    }
}

pub fn build_dual_batch(
    videos: &[&FrameSequence],
    plan: &SamplingPlan,
    layout: &GridLayout,
    pre: &Preprocess,
    epoch: usize,
    step: usize,
) -> Result<DualBatch> {
    let views = [0u8, 1]
        .iter()
        .flat_map(|&view| videos.iter().map(move |v| (view, *v)))
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(view, v)| {
            let draw = view_draw_id(plan.seed, epoch, step, &v.video_id, view);
            aggregate_view(v, plan, layout, draw).map(|a| a.pixels)
        })
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<_> = views.iter().collect();
    Ok(DualBatch {
        images: images_to_tensor(&refs, pre)?,
        labels: videos.iter().map(|v| v.label).collect(),
        video_ids: videos.iter().map(|v| v.video_id.clone()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::RgbImage;

    fn video(id: &str, label: usize, frames: usize) -> FrameSequence {
        let frames = (0..frames)
            .map(|t| RgbImage::from_pixel(4, 4, image::Rgb([t as u8 * 10; 3])))
            .collect();
        FrameSequence::new(frames, label, id).unwrap()
    }

    #[test]
    fn split_is_stratified_and_disjoint() {
        let labels: Vec<usize> = (0..40).map(|i| i % 4).collect();
        let (train, test) = stratified_split(&labels, 0.8, 3).unwrap();
        assert_eq!(train.len(), 32);
        assert_eq!(test.len(), 8);
        for c in 0..4 {
            assert_eq!(test.iter().filter(|&&i| labels[i] == c).count(), 2);
        }
        let mut all: Vec<_> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..40).collect::<Vec<_>>());
        assert_eq!(stratified_split(&labels, 0.8, 3).unwrap(), (train, test));
    }

    #[test]
    fn batches_cover_everything_without_singletons() {
        for n in [2usize, 5, 9, 64, 65, 130] {
            let b = epoch_batches(n, 8, 1, 0).unwrap();
            assert!(b.iter().all(|x| x.len() >= 2));
            let mut all: Vec<_> = b.concat();
            all.sort_unstable();
            assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
        assert_ne!(
            epoch_batches(50, 8, 1, 0).unwrap(),
            epoch_batches(50, 8, 1, 1).unwrap()
        );
        assert!(epoch_batches(1, 8, 1, 0).is_err());
    }

    #[test]
    fn dual_batch_layout() {
        let vids = [video("a", 0, 12), video("b", 1, 12)];
        let refs: Vec<_> = vids.iter().collect();
        let layout = GridLayout::new(2, 2, 4, 4).unwrap();
        let plan = SamplingPlan {
            frames_per_view: 4,
            mode: Default::default(),
            seed: 5,
        };
        let b = build_dual_batch(&refs, &plan, &layout, &Preprocess::default(), 0, 0).unwrap();
        assert_eq!(b.images.dim(), (4, 3, 8, 8));
        assert_eq!(b.labels, vec![0, 1]);
        let again = build_dual_batch(&refs, &plan, &layout, &Preprocess::default(), 0, 0).unwrap();
        assert_eq!(b.images, again.images);
        assert_ne!(view_draw_id(5, 0, 0, "a", 0), view_draw_id(5, 0, 0, "a", 1));
    }
}
