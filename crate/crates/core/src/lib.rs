//! Supervised contrastive frame aggregation.
//!
//! Videos are turned into single grid images ([`frame_pipeline`]), encoded by
//! a small weight-shared CNN with a projection head ([`encoder`]), and trained
//! with a supervised contrastive objective over sibling temporal views
//! ([`contrastive`], [`training`]). [`synthetic`] generates a labelled toy
//! video benchmark for end-to-end checks.

pub mod contrastive;
pub mod encoder;
pub mod error;
pub mod frame_pipeline;
pub mod gradcheck;
pub mod seed;
pub mod synthetic;
pub mod training;

pub use contrastive::{
    l2_normalize, ntxent_loss, positive_mask, scfa_loss, scfa_loss_grad, similarity_matrix,
    EmbeddingBatch, LossResult, PositiveMask, Temperature,
};
pub use encoder::{EncoderConfig, Model, ModelParams};
pub use error::{Error, Result};
pub use frame_pipeline::{
    aggregate_to_grid, aggregate_view, coverage_probability, monte_carlo_coverage, resize_frame,
    sample_indices, AggregatedImage, FrameSequence, GridLayout, SamplingMode, SamplingPlan,
};
pub use synthetic::{gen_synthetic_dataset, generate_videos, SynthConfig};
pub use training::{evaluate_pipeline, linear_probe, train_contrastive, TrainConfig, TrainOutcome};
