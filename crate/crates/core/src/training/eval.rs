use std::path::Path;

use ndarray::{s, Array1, Array2, Axis};

use super::batch::{epoch_batches, prepare_dataset, stratified_split};
use super::config::TrainConfig;
use super::optim::{adam_step, AdamState};
use super::trainer::train_contrastive;
use crate::encoder::{
    images_to_tensor, load_tensors, save_tensors, softmax_cross_entropy, Model, ModelParams, Tensor,
};
use crate::error::{Error, Result};
use crate::frame_pipeline::{aggregate_view, FrameSequence};
use crate::seed::derive_seed;

/// Images per forward call when extracting features.
const CHUNK: usize = 128;

/// Stream id of evaluation view `view` of a video; `tag` separates uses.
fn eval_draw_id(seed: u64, tag: &str, video_id: &str, view: usize) -> u64 {
    derive_seed(
        seed,
        &[
            b"eval",
            tag.as_bytes(),
            video_id.as_bytes(),
            &(view as u64).to_le_bytes(),
        ],
    )
}

/// Encoder features of `views` aggregated views per video, video-major:
/// row `v * views + k` is view `k` of video `v`.
pub fn extract_features(
    model: &Model,
    videos: &[&FrameSequence],
    cfg: &TrainConfig,
    views: usize,
    tag: &str,
) -> Result<Array2<f64>> {
    let layout = cfg.layout()?;
    let plan = cfg.plan();
    let pre = cfg.preprocess();
    let jobs: Vec<(usize, usize)> = (0..videos.len())
        .flat_map(|v| (0..views).map(move |k| (v, k)))
        .collect();
    let mut out = Array2::zeros((jobs.len(), model.config.feature_dim()));
    for (c, chunk) in jobs.chunks(CHUNK).enumerate() {
        let images = chunk
            .iter()
            .map(|&(v, k)| {
                let video = videos[v];
                aggregate_view(
                    video,
                    &plan,
                    &layout,
                    eval_draw_id(cfg.seed, tag, &video.video_id, k),
                )
                .map(|a| a.pixels)
            })
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<_> = images.iter().collect();
        let feats = model.encoder_forward(&images_to_tensor(&refs, &pre)?)?;
        out.slice_mut(s![c * CHUNK..c * CHUNK + chunk.len(), ..])
            .assign(&feats);
    }
    Ok(out)
}

/// Linear softmax classifier `logits = x W^T + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LinearHead {
    /// The classifier head stored in `params` (`cls.weight`, `cls.bias`).
    pub fn from_params(params: &ModelParams) -> Result<Self> {
        let w = params.require("cls.weight")?;
        let b = params.require("cls.bias")?;
        Ok(Self {
            weight: Array2::from_shape_vec((w.shape[0], w.shape[1]), w.data.clone())
                .map_err(|e| Error::Checkpoint(format!("cls.weight: {e}")))?,
            bias: Array1::from(b.data.clone()),
        })
    }

    pub fn logits(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }

    /// Store this head as the classifier of `params`.
    pub fn write_to(&self, params: &mut ModelParams) -> Result<()> {
        for (name, data) in [
            (
                "cls.weight",
                self.weight.iter().copied().collect::<Vec<_>>(),
            ),
            ("cls.bias", self.bias.to_vec()),
        ] {
            let t = params
                .get_mut(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if t.data.len() != data.len() {
                return Err(Error::shape(
                    name,
                    t.data.len().to_string(),
                    data.len().to_string(),
                ));
            }
            t.data = data;
        }
        Ok(())
    }

    fn as_params(&self) -> ModelParams {
        ModelParams::from_tensors(vec![
            Tensor {
                name: "w".into(),
                shape: self.weight.shape().to_vec(),
                data: self.weight.iter().copied().collect(),
            },
            Tensor {
                name: "b".into(),
                shape: vec![self.bias.len()],
                data: self.bias.to_vec(),
            },
        ])
    }

    fn set_from(&mut self, p: &ModelParams) {
        self.weight
            .iter_mut()
            .zip(&p.tensors()[0].data)
            .for_each(|(a, b)| *a = *b);
        self.bias
            .iter_mut()
            .zip(&p.tensors()[1].data)
            .for_each(|(a, b)| *a = *b);
    }
}

/// Full-batch Adam on mean softmax cross-entropy, starting from `head`.
pub fn fit_linear_head(
    mut head: LinearHead,
    x: &Array2<f64>,
    labels: &[usize],
    epochs: usize,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<LinearHead> {
    if x.nrows() != labels.len() {
        return Err(Error::shape(
            "probe labels",
            x.nrows().to_string(),
            labels.len().to_string(),
        ));
    }
    if x.ncols() != head.weight.ncols() {
        return Err(Error::shape(
            "feature dimension",
            head.weight.ncols().to_string(),
            x.ncols().to_string(),
        ));
    }
    let mut params = head.as_params();
    let mut state = AdamState::new(&params);
    for t in 1..=epochs {
        let (_, g) = softmax_cross_entropy(head.logits(x).view(), labels)?;
        let gw = g.t().dot(x);
        let gb = g.sum_axis(Axis(0));
        let grads = ModelParams::from_tensors(vec![
            Tensor::from_data("w", gw.shape().to_vec(), gw.iter().copied().collect())?,
            Tensor::from_data("b", vec![gb.len()], gb.to_vec())?,
        ]);
        adam_step(&mut params, &grads, &mut state, t, lr, &cfg.adam)?;
        head.set_from(&params);
    }
    Ok(head)
}

fn argmax(row: ndarray::ArrayView1<f64>) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
            if v > bv {
                (i, v)
            } else {
                (bi, bv)
            }
        })
        .0
}

/// Accuracy of per-video predictions from logits averaged over `views`
/// consecutive rows.
pub fn video_accuracy(logits: &Array2<f64>, labels: &[usize], views: usize) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let correct = labels
        .iter()
        .enumerate()
        .filter(|&(v, &l)| {
            let mean = logits
                .slice(s![v * views..(v + 1) * views, ..])
                .mean_axis(Axis(0))
                .expect("views > 0");
            argmax(mean.view()) == l
        })
        .count();
    correct as f64 / labels.len() as f64
}

fn repeat_labels(videos: &[&FrameSequence], views: usize) -> Vec<usize> {
    videos
        .iter()
        .flat_map(|v| std::iter::repeat_n(v.label, views))
        .collect()
}

/// Train/test accuracy of one classifier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeResult {
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

/// Fit a linear classifier on frozen encoder features of `train` and score
/// it on `test`. The head starts from the model's own classifier weights.
pub fn linear_probe(
    model: &Model,
    train: &[&FrameSequence],
    test: &[&FrameSequence],
    cfg: &TrainConfig,
) -> Result<(LinearHead, ProbeResult)> {
    let views = cfg.probe_views;
    let x_train = extract_features(model, train, cfg, views, "train")?;
    let x_test = extract_features(model, test, cfg, views, "test")?;
    let y_train = repeat_labels(train, views);
    let head = fit_linear_head(
        LinearHead::from_params(&model.params)?,
        &x_train,
        &y_train,
        cfg.probe_epochs,
        cfg.probe_lr,
        cfg,
    )?;
    let train_labels: Vec<usize> = train.iter().map(|v| v.label).collect();
    let test_labels: Vec<usize> = test.iter().map(|v| v.label).collect();
    let result = ProbeResult {
        train_accuracy: video_accuracy(&head.logits(&x_train), &train_labels, views),
        test_accuracy: video_accuracy(&head.logits(&x_test), &test_labels, views),
    };
    Ok((head, result))
}

/// Fit a linear probe, then train encoder and probe head end to end with
/// cross-entropy on single views and score like [`linear_probe`] with the
/// tuned head. With zero epochs this reproduces the probe exactly.
pub fn finetune_classifier(
    model: &Model,
    train: &[&FrameSequence],
    test: &[&FrameSequence],
    cfg: &TrainConfig,
) -> Result<(Model, ProbeResult)> {
    let layout = cfg.layout()?;
    let plan = cfg.plan();
    let pre = cfg.preprocess();
    let mut model = model.clone();
    let (probe_head, _) = linear_probe(&model, train, test, cfg)?;
    probe_head.write_to(&mut model.params)?;
    let mut state = AdamState::new(&model.params);
    let mut t = 0;
    if cfg.finetune_epochs > 0 && train.len() >= 2 {
        for epoch in 0..cfg.finetune_epochs {
            let batches = epoch_batches(
                train.len(),
                cfg.batch_size,
                derive_seed(cfg.seed, &[b"finetune"]),
                epoch,
            )?;
            for (b, members) in batches.iter().enumerate() {
                let images = members
                    .iter()
                    .map(|&i| {
                        let v = train[i];
                        let draw = derive_seed(
                            cfg.seed,
                            &[
                                b"finetune",
                                &(epoch as u64).to_le_bytes(),
                                &(b as u64).to_le_bytes(),
                                v.video_id.as_bytes(),
                            ],
                        );
                        aggregate_view(v, &plan, &layout, draw).map(|a| a.pixels)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let refs: Vec<_> = images.iter().collect();
                let labels: Vec<usize> = members.iter().map(|&i| train[i].label).collect();
                let pass = model.forward(&images_to_tensor(&refs, &pre)?, true)?;
                let (loss, g) = softmax_cross_entropy(pass.logits.view(), &labels)?;
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        step: b,
                        grad_norm: g.iter().map(|v| v * v).sum::<f64>().sqrt(),
                    });
                }
                let grads = model.backward(&pass, None, Some(g.view()))?;
                t += 1;
                adam_step(
                    &mut model.params,
                    &grads,
                    &mut state,
                    t,
                    cfg.finetune_lr,
                    &cfg.adam,
                )?;
            }
        }
    }
    let views = cfg.probe_views;
    let head = LinearHead::from_params(&model.params)?;
    let score = |videos: &[&FrameSequence], tag: &str| -> Result<f64> {
        let x = extract_features(&model, videos, cfg, views, tag)?;
        let labels: Vec<usize> = videos.iter().map(|v| v.label).collect();
        Ok(video_accuracy(&head.logits(&x), &labels, views))
    };
    let result = ProbeResult {
        train_accuracy: score(train, "train")?,
        test_accuracy: score(test, "test")?,
    };
    Ok((model, result))
}

/// Accuracy over independent seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyReport {
    pub per_seed: Vec<f64>,
}

impl AccuracyReport {
    pub fn mean(&self) -> f64 {
        self.per_seed.iter().sum::<f64>() / self.per_seed.len().max(1) as f64
    }

    /// Sample standard deviation (zero for a single seed).
    pub fn std(&self) -> f64 {
        let n = self.per_seed.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.mean();
        (self.per_seed.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    }
}

impl std::fmt::Display for AccuracyReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:.4} ± {:.4} over {} seeds",
            self.mean(),
            self.std(),
            self.per_seed.len()
        )
    }
}

/// Split prepared videos into training and held-out references using
/// `cfg.split_seed` and `cfg.train_fraction`.
pub fn split_videos<'a>(
    videos: &'a [FrameSequence],
    cfg: &TrainConfig,
) -> Result<(Vec<&'a FrameSequence>, Vec<&'a FrameSequence>)> {
    let labels: Vec<usize> = videos.iter().map(|v| v.label).collect();
    let (train, test) = stratified_split(&labels, cfg.train_fraction, cfg.split_seed)?;
    Ok((
        train.iter().map(|&i| &videos[i]).collect(),
        test.iter().map(|&i| &videos[i]).collect(),
    ))
}

fn per_seed<F>(cfg: &TrainConfig, mut run: F) -> Result<AccuracyReport>
where
    F: FnMut(&TrainConfig) -> Result<f64>,
{
    let per_seed = (0..cfg.eval_seeds as u64)
        .map(|k| {
            let mut c = cfg.clone();
            c.seed = cfg.seed.wrapping_add(k);
            run(&c)
        })
        .collect::<Result<_>>()?;
    Ok(AccuracyReport { per_seed })
}

/// Held-out linear-probe accuracy over `cfg.eval_seeds` seeds. The split is
/// fixed by `cfg.split_seed`; seeds vary the sampled views.
pub fn repeated_linear_probe(
    model: &Model,
    videos: &[FrameSequence],
    cfg: &TrainConfig,
) -> Result<AccuracyReport> {
    let (train, test) = split_videos(videos, cfg)?;
    per_seed(cfg, |c| {
        Ok(linear_probe(model, &train, &test, c)?.1.test_accuracy)
    })
}

/// Held-out fine-tuning accuracy over `cfg.eval_seeds` seeds, same protocol
/// as [`repeated_linear_probe`].
pub fn repeated_finetune(
    model: &Model,
    videos: &[FrameSequence],
    cfg: &TrainConfig,
) -> Result<AccuracyReport> {
    let (train, test) = split_videos(videos, cfg)?;
    per_seed(cfg, |c| {
        Ok(finetune_classifier(model, &train, &test, c)?
            .1
            .test_accuracy)
    })
}

/// Linear probe on a precomputed feature matrix, one row per sample. Each
/// seed draws its own stratified split; the head starts at zero.
pub fn probe_feature_matrix(
    features: &Array2<f64>,
    labels: &[usize],
    num_classes: usize,
    cfg: &TrainConfig,
) -> Result<AccuracyReport> {
    if let Some(&l) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::InvalidArgument(format!(
            "label {l} out of range for {num_classes} classes"
        )));
    }
    (0..cfg.eval_seeds as u64)
        .map(|k| {
            let (train, test) =
                stratified_split(labels, cfg.train_fraction, cfg.split_seed.wrapping_add(k))?;
            let pick = |idx: &[usize]| {
                (
                    features.select(Axis(0), idx),
                    idx.iter().map(|&i| labels[i]).collect::<Vec<_>>(),
                )
            };
            let (x_train, y_train) = pick(&train);
            let (x_test, y_test) = pick(&test);
            let head = LinearHead {
                weight: Array2::zeros((num_classes, features.ncols())),
                bias: Array1::zeros(num_classes),
            };
            let head = fit_linear_head(
                head,
                &x_train,
                &y_train,
                cfg.probe_epochs,
                cfg.probe_lr,
                cfg,
            )?;
            Ok(video_accuracy(&head.logits(&x_test), &y_test, 1))
        })
        .collect::<Result<_>>()
        .map(|per_seed| AccuracyReport { per_seed })
}

/// Probe accuracy of the pretrained encoder and of its random
/// initialisation, measured on held-out videos.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineReport {
    pub pretrained: AccuracyReport,
    pub random_init: AccuracyReport,
}

/// For each of `cfg.eval_seeds` seeds: split, pretrain on the training part,
/// then linear-probe both the pretrained and the untrained encoder.
pub fn evaluate_pipeline(
    videos: &[FrameSequence],
    num_classes: usize,
    cfg: &TrainConfig,
) -> Result<PipelineReport> {
    cfg.validate()?;
    let prepared = prepare_dataset(videos, &cfg.layout()?)?;
    let labels: Vec<usize> = prepared.iter().map(|v| v.label).collect();
    let (mut pretrained, mut random_init) = (Vec::new(), Vec::new());
    for k in 0..cfg.eval_seeds as u64 {
        let mut run = cfg.clone();
        run.seed = cfg.seed.wrapping_add(k);
        run.split_seed = cfg.split_seed.wrapping_add(k);
        let (train_idx, test_idx) = stratified_split(&labels, run.train_fraction, run.split_seed)?;
        let train: Vec<FrameSequence> = train_idx.iter().map(|&i| prepared[i].clone()).collect();
        let train_refs: Vec<&FrameSequence> = train.iter().collect();
        let test_refs: Vec<&FrameSequence> = test_idx.iter().map(|&i| &prepared[i]).collect();

        let outcome = train_contrastive(&train, num_classes, &run, None)?;
        let (_, trained) = linear_probe(&outcome.model, &train_refs, &test_refs, &run)?;
        let untrained = Model::new(run.encoder_config(num_classes), run.seed)?;
        let (_, baseline) = linear_probe(&untrained, &train_refs, &test_refs, &run)?;
        log::info!(
            "seed {}: pretrained probe {:.4}, random-init probe {:.4}",
            run.seed,
            trained.test_accuracy,
            baseline.test_accuracy
        );
        pretrained.push(trained.test_accuracy);
        random_init.push(baseline.test_accuracy);
    }
    Ok(PipelineReport {
        pretrained: AccuracyReport {
            per_seed: pretrained,
        },
        random_init: AccuracyReport {
            per_seed: random_init,
        },
    })
}

/// Save a feature matrix and its labels as tensors `features` and `labels`.
pub fn export_features(path: &Path, features: &Array2<f64>, labels: &[usize]) -> Result<()> {
    if features.nrows() != labels.len() {
        return Err(Error::shape(
            "feature labels",
            features.nrows().to_string(),
            labels.len().to_string(),
        ));
    }
    save_tensors(
        path,
        &[
            Tensor::from_data(
                "features",
                features.shape().to_vec(),
                features.iter().copied().collect(),
            )?,
            Tensor::from_data(
                "labels",
                vec![labels.len()],
                labels.iter().map(|&l| l as f64).collect(),
            )?,
        ],
    )
}

/// Load features written by [`export_features`]. When `expected_dim` is
/// given, a different feature width is a shape error.
pub fn import_features(
    path: &Path,
    expected_dim: Option<usize>,
) -> Result<(Array2<f64>, Vec<usize>)> {
    let tensors = load_tensors(path)?;
    let find = |name: &str| {
        tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("{}: missing tensor {name}", path.display())))
    };
    let f = find("features")?;
    let l = find("labels")?;
    if f.shape.len() != 2 {
        return Err(Error::shape(
            "features rank",
            "2".to_string(),
            f.shape.len().to_string(),
        ));
    }
    if let Some(d) = expected_dim {
        if f.shape[1] != d {
            return Err(Error::shape(
                "feature dimension",
                d.to_string(),
                f.shape[1].to_string(),
            ));
        }
    }
    if l.data.len() != f.shape[0] {
        return Err(Error::shape(
            "label count",
            f.shape[0].to_string(),
            l.data.len().to_string(),
        ));
    }
    let features = Array2::from_shape_vec((f.shape[0], f.shape[1]), f.data.clone())
        .map_err(|e| Error::Checkpoint(format!("features: {e}")))?;
    let labels = l
        .data
        .iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::Checkpoint(format!("label {v} is not a class index")))
            }
        })
        .collect::<Result<_>>()?;
    Ok((features, labels))
}
