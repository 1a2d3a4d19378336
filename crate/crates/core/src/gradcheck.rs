//! Central finite-difference checks of the analytic gradients.

use ndarray::{s, Array2, Array4};
use rand::Rng;

use crate::contrastive::{scfa_loss_grad, EmbeddingBatch};
use crate::encoder::{softmax_cross_entropy, EncoderConfig, Model};
use crate::error::Result;
use crate::seed::rng_for;

pub const FD_STEP: f64 = 1e-5;

/// `|a - b| / max(|a|, |b|, 1e-8)` in the Frobenius norm.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nb = numeric.iter().map(|b| b * b).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-8)
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Relative error per parameter tensor.
    pub per_tensor: Vec<(String, f64)>,
    /// Worst relative error of the loss gradient over random batches.
    pub loss_grad_rel_err: f64,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.per_tensor
            .iter()
            .map(|(_, e)| *e)
            .fold(self.loss_grad_rel_err, f64::max)
    }
}

/// Tiny architecture used for full-model checks: 8x8 input, one conv stage,
/// four-dimensional projections.
pub fn tiny_config() -> EncoderConfig {
    EncoderConfig {
        input_h: 8,
        input_w: 8,
        conv_channels: vec![4],
        proj_hidden: 6,
        proj_dim: 4,
        num_classes: 3,
        linear_projection: false,
    }
}

/// Random sibling-paired metadata for `videos` videos over `classes` labels.
fn paired_labels(videos: usize, classes: usize, rng: &mut impl Rng) -> (Vec<usize>, Vec<String>) {
    let labels = (0..videos).map(|_| rng.random_range(0..classes)).collect();
    let ids = (0..videos).map(|j| format!("v{j}")).collect();
    (labels, ids)
}

/// Contrastive loss on the interleaved views plus cross-entropy on the
/// first view's logits. Returns the loss and, if `grad`, parameter gradients.
fn model_objective(
    model: &Model,
    images: &Array4<f64>,
    labels: &[usize],
    ids: &[String],
    tau: f64,
    grad: bool,
) -> Result<(f64, Option<crate::encoder::ModelParams>)> {
    let n = labels.len();
    let pass = model.forward(images, grad)?;
    let p = &pass.projections;
    let batch =
        EmbeddingBatch::from_views(p.slice(s![..n, ..]), p.slice(s![n.., ..]), labels, ids)?;
    let lr = scfa_loss_grad(&batch, tau)?;
    let doubled: Vec<usize> = labels.iter().chain(labels).copied().collect();
    let (ce, gl) = softmax_cross_entropy(pass.logits.view(), &doubled)?;
    if !grad {
        return Ok((lr.value + ce, None));
    }
    // un-interleave: batch row 2j is view-0 sample j, 2j+1 is view-1 sample j
    let mut gp = Array2::zeros(p.raw_dim());
    for j in 0..n {
        gp.row_mut(j).assign(&lr.grad.row(2 * j));
        gp.row_mut(n + j).assign(&lr.grad.row(2 * j + 1));
    }
    let grads = model.backward(&pass, Some(gp.view()), Some(gl.view()))?;
    Ok((lr.value + ce, Some(grads)))
}

/// Compare analytic and central-difference gradients for every parameter
/// of a tiny model, and of the contrastive loss alone on random batches.
pub fn run_gradcheck(seed: u64) -> Result<GradCheckReport> {
    let mut rng = rng_for(seed, 0);
    let config = tiny_config();
    let mut model = Model::new(config.clone(), seed)?;
    // non-zero biases so every ReLU path is exercised
    for t in model.params.tensors_mut() {
        if t.name.ends_with(".bias") {
            t.data
                .iter_mut()
                .for_each(|v| *v = rng.random_range(-0.1..0.1));
        }
    }
    let videos = 3;
    let images = Array4::from_shape_fn((2 * videos, 3, 8, 8), |_| rng.random::<f64>());
    let (labels, ids) = paired_labels(videos, 2, &mut rng);
    let tau = 0.5;

    let (_, grads) = model_objective(&model, &images, &labels, &ids, tau, true)?;
    let grads = grads.expect("gradient requested");
    let mut per_tensor = Vec::new();
    for ti in 0..model.params.tensors().len() {
        let name = model.params.tensors()[ti].name.clone();
        let mut numeric = Vec::with_capacity(model.params.tensors()[ti].len());
        for k in 0..model.params.tensors()[ti].len() {
            let orig = model.params.tensors()[ti].data[k];
            model.params.tensors_mut()[ti].data[k] = orig + FD_STEP;
            let up = model_objective(&model, &images, &labels, &ids, tau, false)?.0;
            model.params.tensors_mut()[ti].data[k] = orig - FD_STEP;
            let down = model_objective(&model, &images, &labels, &ids, tau, false)?.0;
            model.params.tensors_mut()[ti].data[k] = orig;
            numeric.push((up - down) / (2.0 * FD_STEP));
        }
        let analytic = &grads.get(&name).expect("same layout").data;
        per_tensor.push((name, relative_error(analytic, &numeric)));
    }

    let mut loss_grad_rel_err: f64 = 0.0;
    for trial in 0..20 {
        let videos = [2, 4, 8][trial % 3];
        let dim = [4, 16][trial % 2];
        let tau = [0.07, 0.5, 1.0][trial % 3];
        let z = Array2::from_shape_fn((2 * videos, dim), |_| rng.random_range(-1.0..1.0));
        let (labels, ids) = paired_labels(videos, 3, &mut rng);
        let z1 = z.slice(s![..videos, ..]).to_owned();
        let z2 = z.slice(s![videos.., ..]).to_owned();
        let batch = EmbeddingBatch::from_views(z1.view(), z2.view(), &labels, &ids)?;
        let analytic = scfa_loss_grad(&batch, tau)?.grad;
        let mut numeric = Vec::with_capacity(analytic.len());
        for i in 0..batch.rows() {
            for d in 0..dim {
                let mut zp = batch.z.clone();
                zp[[i, d]] += FD_STEP;
                let up = scfa_loss_grad(&batch.with_embeddings(zp)?, tau)?.value;
                let mut zm = batch.z.clone();
                zm[[i, d]] -= FD_STEP;
                let down = scfa_loss_grad(&batch.with_embeddings(zm)?, tau)?.value;
                numeric.push((up - down) / (2.0 * FD_STEP));
            }
        }
        let analytic: Vec<f64> = analytic.iter().copied().collect();
        loss_grad_rel_err = loss_grad_rel_err.max(relative_error(&analytic, &numeric));
    }

    Ok(GradCheckReport {
        per_tensor,
        loss_grad_rel_err,
    })
}
