//! Temporal frame sampling and video-to-image grid aggregation.
//!
//! A video is a [`FrameSequence`]. A view of it is built by sampling `y`
//! frame indices ([`sample_indices`]), resizing each frame to the grid cell
//! size ([`resize_frame`]) and tiling them row-major onto a zeroed canvas
//! ([`aggregate_to_grid`]).

mod coverage;
mod frames;
mod grid;
mod resize;
mod sampling;

pub use coverage::{coverage_probability, monte_carlo_coverage, CoverageEstimate};
pub use frames::{
    load_dataset, load_frame_sequence, read_manifest, write_frame_sequence, write_manifest,
    FrameSequence, ManifestEntry,
};
pub use grid::{aggregate_to_grid, aggregate_view, extract_cell, AggregatedImage, GridLayout};
pub use resize::resize_frame;
pub use sampling::{sample_indices, SamplingMode, SamplingPlan};
