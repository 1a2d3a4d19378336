use image::{GenericImage, GenericImageView, RgbImage};

use super::{resize_frame, sample_indices, FrameSequence, SamplingPlan};
use crate::error::{Error, Result};

/// An `rows x cols` grid of `cell_h x cell_w` cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridLayout {
    pub rows: u32,
    pub cols: u32,
    pub cell_h: u32,
    pub cell_w: u32,
}

impl GridLayout {
    pub fn new(rows: u32, cols: u32, cell_h: u32, cell_w: u32) -> Result<Self> {
        if rows == 0 || cols == 0 || cell_h == 0 || cell_w == 0 {
            return Err(Error::InvalidArgument(format!(
                "grid {rows}x{cols} of {cell_h}x{cell_w} cells has a zero dimension"
            )));
        }
        Ok(Self {
            rows,
            cols,
            cell_h,
            cell_w,
        })
    }

    /// 16 frames of 56x56 on a 4x4 grid: a 224x224 canvas.
    pub fn reference_224() -> Self {
        Self::new(4, 4, 56, 56).expect("non-zero layout")
    }

    pub fn capacity(&self) -> usize {
        (self.rows * self.cols) as usize
    }

    pub fn canvas_h(&self) -> u32 {
        self.rows * self.cell_h
    }

    pub fn canvas_w(&self) -> u32 {
        self.cols * self.cell_w
    }

    /// Top-left pixel `(x, y)` of cell `k`, counted row-major.
    pub fn cell_origin(&self, k: usize) -> (u32, u32) {
        let k = k as u32;
        ((k % self.cols) * self.cell_w, (k / self.cols) * self.cell_h)
    }
}

/// Tile already-resized frames row-major onto a zeroed canvas.
pub fn aggregate_to_grid(frames: &[RgbImage], layout: &GridLayout) -> Result<RgbImage> {
    if frames.len() > layout.capacity() {
        return Err(Error::InvalidArgument(format!(
            "{} frames do not fit a {}x{} grid",
            frames.len(),
            layout.rows,
            layout.cols
        )));
    }
    let mut canvas = RgbImage::new(layout.canvas_w(), layout.canvas_h());
    for (k, frame) in frames.iter().enumerate() {
        if frame.dimensions() != (layout.cell_w, layout.cell_h) {
            return Err(Error::shape(
                format!("frame {k}"),
                format!("{}x{}", layout.cell_w, layout.cell_h),
                format!("{}x{}", frame.width(), frame.height()),
            ));
        }
        let (x, y) = layout.cell_origin(k);
        canvas
            .copy_from(frame, x, y)
            .expect("cell lies inside the canvas");
    }
    Ok(canvas)
}

/// Copy grid cell `k` back out of a canvas.
pub fn extract_cell(canvas: &RgbImage, layout: &GridLayout, k: usize) -> RgbImage {
    let (x, y) = layout.cell_origin(k);
    canvas.view(x, y, layout.cell_w, layout.cell_h).to_image()
}

/// One temporal view of a video rendered onto a grid canvas.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedImage {
    pub pixels: RgbImage,
    pub source_video_id: String,
    pub source_indices: Vec<usize>,
    pub label: usize,
    pub draw_id: u64,
}

impl AggregatedImage {
    /// `<video_id>_d<draw_id>_<i0-i1-...>.png`
    pub fn file_name(&self) -> String {
        let idx: Vec<String> = self.source_indices.iter().map(usize::to_string).collect();
        format!(
            "{}_d{}_{}.png",
            self.source_video_id,
            self.draw_id,
            idx.join("-")
        )
    }
}

/// Sample a view of `seq` and aggregate it onto `layout`.
///
/// Frames already at the cell size are used as-is, which is equivalent to
/// resizing since the identity resize is exact.
pub fn aggregate_view(
    seq: &FrameSequence,
    plan: &SamplingPlan,
    layout: &GridLayout,
    draw_id: u64,
) -> Result<AggregatedImage> {
    if plan.frames_per_view > layout.capacity() {
        return Err(Error::InvalidArgument(format!(
            "{} frames per view exceed grid capacity {}",
            plan.frames_per_view,
            layout.capacity()
        )));
    }
    let indices = sample_indices(seq.len(), plan, draw_id)?;
    let mut canvas = RgbImage::new(layout.canvas_w(), layout.canvas_h());
    for (k, &i) in indices.iter().enumerate() {
        let frame = &seq.frames[i];
        let (x, y) = layout.cell_origin(k);
        if frame.dimensions() == (layout.cell_w, layout.cell_h) {
            canvas.copy_from(frame, x, y).expect("cell inside canvas");
        } else {
            let resized = resize_frame(frame, layout.cell_h, layout.cell_w)?;
            canvas
                .copy_from(&resized, x, y)
                .expect("cell inside canvas");
        }
    }
    Ok(AggregatedImage {
        pixels: canvas,
        source_video_id: seq.video_id.clone(),
        source_indices: indices,
        label: seq.label,
        draw_id,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame_pipeline::SamplingMode;
    use image::Rgb;

    fn tagged(k: u8, size: u32) -> RgbImage {
        RgbImage::from_fn(size, size, |x, y| Rgb([k + 1, x as u8, y as u8]))
    }

    #[test]
    fn reference_layout_places_frame_5() {
        let layout = GridLayout::reference_224();
        let frames: Vec<_> = (0..16).map(|k| tagged(k, 56)).collect();
        let canvas = aggregate_to_grid(&frames, &layout).unwrap();
        assert_eq!(canvas.dimensions(), (224, 224));
        assert_eq!(layout.cell_origin(5), (56, 56));
        for y in 0..224 {
            for x in 0..224 {
                let inside = (56..112).contains(&x) && (56..112).contains(&y);
                assert_eq!(canvas.get_pixel(x, y)[0] == 6, inside);
            }
        }
    }

    #[test]
    fn single_frame_leaves_other_cells_blank() {
        let layout = GridLayout::new(4, 4, 8, 8).unwrap();
        let canvas = aggregate_to_grid(&[tagged(0, 8)], &layout).unwrap();
        assert_eq!(extract_cell(&canvas, &layout, 0), tagged(0, 8));
        for k in 1..16 {
            assert!(extract_cell(&canvas, &layout, k)
                .pixels()
                .all(|p| p.0 == [0, 0, 0]));
        }
    }

    #[test]
    fn overfull_and_mismatched_rejected() {
        let layout = GridLayout::new(1, 2, 4, 4).unwrap();
        let frames: Vec<_> = (0..3).map(|k| tagged(k, 4)).collect();
        assert!(aggregate_to_grid(&frames, &layout).is_err());
        assert!(aggregate_to_grid(&[tagged(0, 5)], &layout).is_err());
        assert!(GridLayout::new(0, 2, 4, 4).is_err());
    }

    #[test]
    fn view_records_provenance() {
        let frames: Vec<_> = (0..20).map(|k| tagged(k, 16)).collect();
        let seq = FrameSequence::new(frames, 1, "clip").unwrap();
        let plan = SamplingPlan {
            frames_per_view: 4,
            mode: SamplingMode::WithoutReplacement,
            seed: 5,
        };
        let layout = GridLayout::new(2, 2, 8, 8).unwrap();
        let view = aggregate_view(&seq, &plan, &layout, 3).unwrap();
        assert_eq!(view.label, 1);
        assert_eq!(view.source_indices, sample_indices(20, &plan, 3).unwrap());
        for (k, &i) in view.source_indices.iter().enumerate() {
            let want = resize_frame(&seq.frames[i], 8, 8).unwrap();
            assert_eq!(extract_cell(&view.pixels, &layout, k), want);
        }
        let name = view.file_name();
        assert!(
            name.starts_with("clip_d3_") && name.ends_with(".png"),
            "{name}"
        );
    }
}
