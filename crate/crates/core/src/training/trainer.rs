use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use ndarray::{s, Array2};

use super::batch::{build_dual_batch, epoch_batches};
use super::config::TrainConfig;
use super::optim::{adam_step, cosine_lr, AdamState};
use crate::contrastive::{scfa_loss_grad, EmbeddingBatch};
use crate::encoder::{Model, ModelParams};
use crate::error::{Error, Result};
use crate::frame_pipeline::FrameSequence;

/// Per-epoch summary of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Learning rate used for the epoch's first step.
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters after the last epoch.
    pub model: Model,
    /// Parameters of the epoch with the lowest mean loss.
    pub best: ModelParams,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    pub steps: usize,
}

/// `epoch,mean_loss,lr` rows; values print with full round-trip precision,
/// so identical runs give identical files.
pub fn metrics_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,mean_loss,lr\n");
    for r in history {
        let _ = writeln!(s, "{},{:e},{:e}", r.epoch, r.mean_loss, r.lr);
    }
    s
}

/// Loss and raw-projection gradient for one stacked dual batch.
///
/// `projections` holds view 0 of every video in the first half and view 1
/// in the second; the returned gradient uses the same row order.
pub fn contrastive_step_grad(
    projections: &Array2<f64>,
    labels: &[usize],
    video_ids: &[String],
    tau: f64,
) -> Result<(f64, Array2<f64>)> {
    let n = labels.len();
    let batch = EmbeddingBatch::from_views(
        projections.slice(s![..n, ..]),
        projections.slice(s![n.., ..]),
        labels,
        video_ids,
    )?;
    let result = scfa_loss_grad(&batch, tau)?;
    // batch row 2j is view 0 of video j, row 2j+1 is view 1
    let mut grad = Array2::zeros(projections.raw_dim());
    for j in 0..n {
        grad.row_mut(j).assign(&result.grad.row(2 * j));
        grad.row_mut(n + j).assign(&result.grad.row(2 * j + 1));
    }
    Ok((result.value, grad))
}

/// Contrastive pretraining of encoder and projection head on `train`.
///
/// `train` should already be resized to the grid cell size. When `out_dir`
/// is given, `metrics.csv`, `timing.csv`, `config.txt`, `best.ckpt` and
/// `final.ckpt` are written there.
pub fn train_contrastive(
    train: &[FrameSequence],
    num_classes: usize,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let layout = cfg.layout()?;
    let plan = cfg.plan();
    let pre = cfg.preprocess();
    let mut model = Model::new(cfg.encoder_config(num_classes), cfg.seed)?;
    let mut adam = AdamState::new(&model.params);

    let per_epoch = epoch_batches(train.len(), cfg.batch_size, cfg.seed, 0)?.len();
    let total_steps = per_epoch * cfg.epochs;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("config.txt");
        fs::write(&path, cfg.to_kv()).map_err(|e| Error::io(&path, e))?;
    }

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut timing = String::from("epoch,seconds\n");
    let mut best = (f64::INFINITY, 0usize, model.params.clone());
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let batches = epoch_batches(train.len(), cfg.batch_size, cfg.seed, epoch)?;
        let mut loss_sum = 0.0;
        let mut first_lr = None;
        for (b, members) in batches.iter().enumerate() {
            let videos: Vec<&FrameSequence> = members.iter().map(|&i| &train[i]).collect();
            let dual = build_dual_batch(&videos, &plan, &layout, &pre, epoch, b)?;
            let pass = model.forward(&dual.images, true)?;
            let (loss, grad) =
                contrastive_step_grad(&pass.projections, &dual.labels, &dual.video_ids, cfg.tau)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step: b,
                    grad_norm,
                });
            }
            let grads = model.backward(&pass, Some(grad.view()), None)?;
            if !grads.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step: b,
                    grad_norm: grads.norm(),
                });
            }
            let lr = cosine_lr(step, total_steps, cfg.lr_max, cfg.lr_min)?;
            first_lr.get_or_insert(lr);
            step += 1;
            adam_step(&mut model.params, &grads, &mut adam, step, lr, &cfg.adam)?;
            loss_sum += loss;
        }
        let record = EpochRecord {
            epoch,
            mean_loss: loss_sum / batches.len() as f64,
            lr: first_lr.unwrap_or(cfg.lr_min),
        };
        let secs = started.elapsed().as_secs_f64();
        log::info!(
            "epoch {epoch}: loss {:.6} lr {:.3e} ({secs:.2}s)",
            record.mean_loss,
            record.lr
        );
        let _ = writeln!(timing, "{epoch},{secs:.4}");
        if record.mean_loss < best.0 {
            best = (record.mean_loss, epoch, model.params.clone());
        }
        history.push(record);
    }

    if let Some(dir) = out_dir {
        let write = |name: &str, text: &str| {
            let path = dir.join(name);
            fs::write(&path, text).map_err(|e| Error::io(&path, e))
        };
        write("metrics.csv", &metrics_csv(&history))?;
        write("timing.csv", &timing)?;
        Model::from_params(best.2.clone(), model.config.input_h, model.config.input_w)?
            .save(&dir.join("best.ckpt"))?;
        model.save(&dir.join("final.ckpt"))?;
    }
    Ok(TrainOutcome {
        model,
        best: best.2,
        best_epoch: best.1,
        history,
        steps: step,
    })
}
