//! Contrastive pretraining, optimisation and downstream evaluation.

mod batch;
mod config;
mod eval;
mod optim;
mod trainer;

pub use batch::{
    build_dual_batch, epoch_batches, prepare_dataset, stratified_split, view_draw_id, DualBatch,
};
pub use config::TrainConfig;
pub use eval::{
    evaluate_pipeline, export_features, extract_features, finetune_classifier, fit_linear_head,
    import_features, linear_probe, probe_feature_matrix, repeated_finetune, repeated_linear_probe,
    split_videos, video_accuracy, AccuracyReport, LinearHead, PipelineReport, ProbeResult,
};
pub use optim::{adam_step, cosine_lr, AdamConfig, AdamState};
pub use trainer::{
    contrastive_step_grad, metrics_csv, train_contrastive, EpochRecord, TrainOutcome,
};
