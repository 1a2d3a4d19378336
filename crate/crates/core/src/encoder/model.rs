use std::path::Path;

use image::RgbImage;
use ndarray::{s, Array1, Array2, Array4, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;

use super::checkpoint::{load_tensors, save_tensors};
use super::conv::{conv_relu_backward, conv_relu_forward, global_average_pool, ConvShape};
use super::params::{EncoderConfig, ModelParams, Tensor};
use crate::contrastive::normalize_rows;
use crate::error::{Error, Result};

/// Per-sample post-ReLU activations of every conv stage.
type StageActivations = Vec<Vec<Vec<f64>>>;
/// Per-channel pixel normalization applied after scaling to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preprocess {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for Preprocess {
    fn default() -> Self {
        Self {
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }
}

/// Stack RGB images into an `N x 3 x H x W` tensor.
pub fn images_to_tensor(images: &[&RgbImage], pre: &Preprocess) -> Result<Array4<f64>> {
    let Some(first) = images.first() else {
        return Ok(Array4::zeros((0, 3, 0, 0)));
    };
    let (w, h) = first.dimensions();
    let mut out = Array4::zeros((images.len(), 3, h as usize, w as usize));
    for (n, img) in images.iter().enumerate() {
        if img.dimensions() != (w, h) {
            return Err(Error::shape(
                format!("image {n}"),
                format!("{w}x{h}"),
                format!("{}x{}", img.width(), img.height()),
            ));
        }
        for (x, y, p) in img.enumerate_pixels() {
            for c in 0..3 {
                out[[n, c, y as usize, x as usize]] =
                    (p[c] as f64 / 255.0 - pre.mean[c]) / pre.std[c];
            }
        }
    }
    Ok(out)
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn softmax_cross_entropy(
    logits: ArrayView2<f64>,
    labels: &[usize],
) -> Result<(f64, Array2<f64>)> {
    let (n, c) = logits.dim();
    if labels.len() != n {
        return Err(Error::shape("labels", n, labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} out of range for {c} classes"
        )));
    }
    let mut grad = Array2::zeros((n, c));
    let mut total = 0.0;
    for (i, row) in logits.outer_iter().enumerate() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let sum: f64 = row.iter().map(|v| (v - m).exp()).sum();
        let lse = m + sum.ln();
        total += lse - row[labels[i]];
        for k in 0..c {
            let p = (row[k] - lse).exp();
            grad[[i, k]] = (p - f64::from(k == labels[i])) / n as f64;
        }
    }
    Ok((total / n as f64, grad))
}

/// Encoder + projection head + classifier head with one shared parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: EncoderConfig,
    pub params: ModelParams,
}

/// Intermediate values kept for [`Model::backward`].
#[derive(Debug, Clone)]
struct Cache {
    input: Array4<f64>,
    /// Per sample, the activated output of every conv stage.
    stages: Vec<Vec<Vec<f64>>>,
    /// Pre-ReLU hidden layer of the projection MLP.
    hidden_pre: Option<Array2<f64>>,
}

/// Outputs of a full forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// Pooled encoder features `r`.
    pub features: Array2<f64>,
    /// Projection head output before normalization.
    pub projections: Array2<f64>,
    /// Row-normalized projections `z`.
    pub embeddings: Array2<f64>,
    pub logits: Array2<f64>,
    cache: Option<Cache>,
}

impl ForwardPass {
    pub fn has_cache(&self) -> bool {
        self.cache.is_some()
    }

    /// Drop cached activations (e.g. after the backward pass).
    pub fn without_cache(mut self) -> Self {
        self.cache = None;
        self
    }
}

fn matrix<'a>(t: &'a Tensor) -> ArrayView2<'a, f64> {
    ArrayView2::from_shape((t.shape[0], t.shape[1]), &t.data).expect("rank-2 tensor")
}

fn vector(t: &Tensor) -> ArrayView1<'_, f64> {
    ArrayView1::from(&t.data[..])
}

/// `x W^T + b`
fn dense(x: ArrayView2<f64>, w: &Tensor, b: &Tensor) -> Array2<f64> {
    x.dot(&matrix(w).t()) + vector(b)
}

impl Model {
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::init(&config, seed);
        Ok(Self { config, params })
    }

    pub fn from_params(params: ModelParams, input_h: usize, input_w: usize) -> Result<Self> {
        let config = EncoderConfig::from_params(&params, input_h, input_w)?;
        Ok(Self { config, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_tensors(path, self.params.tensors())
    }

    pub fn load(path: &Path, input_h: usize, input_w: usize) -> Result<Self> {
        Self::from_params(
            ModelParams::from_tensors(load_tensors(path)?),
            input_h,
            input_w,
        )
    }

    fn tensor(&self, name: &str) -> &Tensor {
        self.params
            .get(name)
            .expect("parameters validated against config")
    }

    fn check_images(&self, images: &Array4<f64>) -> Result<()> {
        let (_, c, h, w) = images.dim();
        let want = (3, self.config.input_h, self.config.input_w);
        if (c, h, w) != want {
            return Err(Error::shape(
                "image batch",
                format!("{want:?}"),
                format!("{:?}", (c, h, w)),
            ));
        }
        Ok(())
    }

    fn check_features(&self, r: ArrayView2<f64>) -> Result<()> {
        if r.ncols() != self.config.feature_dim() {
            return Err(Error::shape(
                "features",
                self.config.feature_dim(),
                r.ncols(),
            ));
        }
        Ok(())
    }

    fn conv_shapes(&self) -> Vec<ConvShape> {
        let dims = self.config.spatial_dims();
        let mut cin = 3;
        self.config
            .conv_channels
            .iter()
            .enumerate()
            .map(|(i, &cout)| {
                let s = ConvShape {
                    cin,
                    cout,
                    h: dims[i].0,
                    w: dims[i].1,
                };
                cin = cout;
                s
            })
            .collect()
    }

    /// Conv stages for one sample: the activated output of every stage.
    fn encode_sample(&self, x: &[f64], shapes: &[ConvShape]) -> Vec<Vec<f64>> {
        let mut stages: Vec<Vec<f64>> = Vec::with_capacity(shapes.len());
        for (i, s) in shapes.iter().enumerate() {
            let input = stages.last().map_or(x, Vec::as_slice);
            let w = &self.tensor(&format!("conv{i}.weight")).data;
            let b = &self.tensor(&format!("conv{i}.bias")).data;
            let out = conv_relu_forward(input, w, b, s);
            stages.push(out);
        }
        stages
    }

    fn pooled(&self, stages: &[Vec<f64>], shapes: &[ConvShape]) -> Vec<f64> {
        let last = shapes.last().expect("at least one stage");
        global_average_pool(
            stages.last().unwrap(),
            last.cout,
            last.out_h(),
            last.out_w(),
        )
    }

    /// Pooled encoder features `r`, one row per image.
    pub fn encoder_forward(&self, images: &Array4<f64>) -> Result<Array2<f64>> {
        Ok(self.run_encoder(images)?.0)
    }

    fn run_encoder(&self, images: &Array4<f64>) -> Result<(Array2<f64>, StageActivations)> {
        self.check_images(images)?;
        let shapes = self.conv_shapes();
        let n = images.dim().0;
        let f = self.config.feature_dim();
        let per_sample: Vec<(Vec<f64>, Vec<Vec<f64>>)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let x = images.slice(s![i, .., .., ..]);
                let x = x.as_standard_layout();
                let stages = self.encode_sample(x.as_slice().expect("contiguous"), &shapes);
                (self.pooled(&stages, &shapes), stages)
            })
            .collect();
        let mut features = Array2::zeros((n, f));
        let mut all_stages = Vec::with_capacity(n);
        for (i, (r, stages)) in per_sample.into_iter().enumerate() {
            features.row_mut(i).assign(&Array1::from(r));
            all_stages.push(stages);
        }
        Ok((features, all_stages))
    }

    fn projection_with_hidden(&self, r: ArrayView2<f64>) -> (Array2<f64>, Option<Array2<f64>>) {
        let fc1 = dense(
            r,
            self.tensor("proj.fc1.weight"),
            self.tensor("proj.fc1.bias"),
        );
        if self.config.linear_projection {
            return (fc1, None);
        }
        let hidden = fc1.mapv(|v| v.max(0.0));
        let out = dense(
            hidden.view(),
            self.tensor("proj.fc2.weight"),
            self.tensor("proj.fc2.bias"),
        );
        (out, Some(fc1))
    }

    /// Projection head output before normalization.
    pub fn projection_raw(&self, r: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_features(r)?;
        Ok(self.projection_with_hidden(r).0)
    }

    /// `z = normalize(W2 relu(W1 r + b1) + b2)`, row-wise.
    pub fn projection_forward(&self, r: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(normalize_rows(self.projection_raw(r)?.view()))
    }

    pub fn classifier_forward(&self, r: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_features(r)?;
        Ok(dense(r, self.tensor("cls.weight"), self.tensor("cls.bias")))
    }

    /// Full forward pass; keep activations when `keep_cache` for backward.
    pub fn forward(&self, images: &Array4<f64>, keep_cache: bool) -> Result<ForwardPass> {
        let (features, stages) = self.run_encoder(images)?;
        let (projections, hidden_pre) = self.projection_with_hidden(features.view());
        let embeddings = normalize_rows(projections.view());
        let logits = dense(
            features.view(),
            self.tensor("cls.weight"),
            self.tensor("cls.bias"),
        );
        let cache = keep_cache.then(|| Cache {
            input: images.clone(),
            stages,
            hidden_pre,
        });
        Ok(ForwardPass {
            features,
            projections,
            embeddings,
            logits,
            cache,
        })
    }

    /// Both views through the same parameters; returns normalized `(z1, z2)`.
    pub fn dual_forward(
        &self,
        x1: &Array4<f64>,
        x2: &Array4<f64>,
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        if x1.dim() != x2.dim() {
            return Err(Error::shape(
                "second view batch",
                format!("{:?}", x1.dim()),
                format!("{:?}", x2.dim()),
            ));
        }
        let joined = ndarray::concatenate(Axis(0), &[x1.view(), x2.view()]).expect("equal shapes");
        let z = self.forward(&joined, false)?.embeddings;
        let n = x1.dim().0;
        Ok((
            z.slice(s![..n, ..]).to_owned(),
            z.slice(s![n.., ..]).to_owned(),
        ))
    }

    /// Reverse pass. `grad_projection` is the gradient at the un-normalized
    /// projections, `grad_logits` at the classifier logits; either may be
    /// absent. Returns gradients laid out like [`ModelParams`].
    pub fn backward(
        &self,
        pass: &ForwardPass,
        grad_projection: Option<ArrayView2<f64>>,
        grad_logits: Option<ArrayView2<f64>>,
    ) -> Result<ModelParams> {
        let cache = pass.cache.as_ref().ok_or(Error::MissingCache)?;
        let r = pass.features.view();
        let n = r.nrows();
        let mut grads = self.params.zeros_like();
        let mut grad_r = Array2::<f64>::zeros(r.raw_dim());

        let mut write = |name: &str, value: Array2<f64>| {
            let t = grads.get_mut(name).expect("tensor exists");
            t.data
                .copy_from_slice(value.as_standard_layout().as_slice().unwrap());
        };
        let col_sum = |g: &Array2<f64>| g.sum_axis(Axis(0)).insert_axis(Axis(0));

        if let Some(gp) = grad_projection {
            if gp.dim() != pass.projections.dim() {
                return Err(Error::shape(
                    "projection gradient",
                    format!("{:?}", pass.projections.dim()),
                    format!("{:?}", gp.dim()),
                ));
            }
            let grad_fc1 = if self.config.linear_projection {
                gp.to_owned()
            } else {
                let hidden_pre = cache.hidden_pre.as_ref().ok_or(Error::MissingCache)?;
                let hidden = hidden_pre.mapv(|v| v.max(0.0));
                write("proj.fc2.weight", gp.t().dot(&hidden));
                write("proj.fc2.bias", col_sum(&gp.to_owned()));
                let grad_hidden = gp.dot(&matrix(self.tensor("proj.fc2.weight")));
                &grad_hidden * &hidden_pre.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 })
            };
            write("proj.fc1.weight", grad_fc1.t().dot(&r));
            write("proj.fc1.bias", col_sum(&grad_fc1));
            grad_r = grad_r + grad_fc1.dot(&matrix(self.tensor("proj.fc1.weight")));
        }

        if let Some(gl) = grad_logits {
            if gl.dim() != pass.logits.dim() {
                return Err(Error::shape(
                    "logit gradient",
                    format!("{:?}", pass.logits.dim()),
                    format!("{:?}", gl.dim()),
                ));
            }
            write("cls.weight", gl.t().dot(&r));
            write("cls.bias", col_sum(&gl.to_owned()));
            grad_r = grad_r + gl.dot(&matrix(self.tensor("cls.weight")));
        }

        // Conv stages, per sample in parallel, reduced in sample order.
        let shapes = self.conv_shapes();
        let stage_count = shapes.len();
        let per_sample: Vec<Vec<(Vec<f64>, Vec<f64>)>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let stages = &cache.stages[i];
                let last = &shapes[stage_count - 1];
                let area = (last.out_h() * last.out_w()) as f64;
                let mut grad_out: Vec<f64> = grad_r
                    .row(i)
                    .iter()
                    .flat_map(|&g| std::iter::repeat_n(g / area, last.out_h() * last.out_w()))
                    .collect();
                let x = cache.input.slice(s![i, .., .., ..]);
                let x = x.as_standard_layout();
                let mut layer_grads = vec![(Vec::new(), Vec::new()); stage_count];
                for k in (0..stage_count).rev() {
                    let s = &shapes[k];
                    let input = if k == 0 {
                        x.as_slice().unwrap()
                    } else {
                        &stages[k - 1][..]
                    };
                    let w = &self.tensor(&format!("conv{k}.weight")).data;
                    let mut gw = vec![0.0; w.len()];
                    let mut gb = vec![0.0; s.cout];
                    let gx = conv_relu_backward(
                        input,
                        w,
                        &stages[k],
                        &grad_out,
                        s,
                        &mut gw,
                        &mut gb,
                        k > 0,
                    );
                    layer_grads[k] = (gw, gb);
                    if let Some(gx) = gx {
                        grad_out = gx;
                    }
                }
                layer_grads
            })
            .collect();
        for sample in per_sample {
            for (k, (gw, gb)) in sample.into_iter().enumerate() {
                let tw = grads.get_mut(&format!("conv{k}.weight")).unwrap();
                tw.data.iter_mut().zip(&gw).for_each(|(a, b)| *a += b);
                let tb = grads.get_mut(&format!("conv{k}.bias")).unwrap();
                tb.data.iter_mut().zip(&gb).for_each(|(a, b)| *a += b);
            }
        }
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> EncoderConfig {
        EncoderConfig {
            input_h: 8,
            input_w: 8,
            conv_channels: vec![3],
            proj_hidden: 5,
            proj_dim: 4,
            num_classes: 3,
            linear_projection: false,
        }
    }

    fn random_images(n: usize, h: usize, w: usize, seed: u64) -> Array4<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array4::from_shape_fn((n, 3, h, w), |_| rng.random())
    }

    #[test]
    fn zero_image_zero_bias_gives_zero_features() {
        let model = Model::new(EncoderConfig::default(), 1).unwrap();
        let r = model
            .encoder_forward(&Array4::zeros((2, 3, 32, 32)))
            .unwrap();
        assert!(r.iter().all(|&v| v == 0.0));
        let z = model.projection_forward(r.view()).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicated_images_give_identical_rows() {
        let model = Model::new(EncoderConfig::default(), 1).unwrap();
        let one = random_images(1, 32, 32, 5);
        let two = ndarray::concatenate(Axis(0), &[one.view(), one.view()]).unwrap();
        let r = model.encoder_forward(&two).unwrap();
        assert_eq!(r.row(0), r.row(1));
        assert_eq!(r, model.encoder_forward(&two).unwrap());
    }

    #[test]
    fn projections_are_unit_rows() {
        let model = Model::new(EncoderConfig::default(), 2).unwrap();
        let z = model
            .forward(&random_images(3, 32, 32, 1), false)
            .unwrap()
            .embeddings;
        for row in z.outer_iter() {
            assert!((row.dot(&row).sqrt() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn projection_matches_scalar_loops() {
        let model = Model::new(EncoderConfig::default(), 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let r = Array2::from_shape_fn((3, 32), |_| rng.random_range(-1.0..1.0));
        let raw = model.projection_raw(r.view()).unwrap();
        let p = &model.params;
        let (w1, b1) = (
            &p.get("proj.fc1.weight").unwrap().data,
            &p.get("proj.fc1.bias").unwrap().data,
        );
        let (w2, b2) = (
            &p.get("proj.fc2.weight").unwrap().data,
            &p.get("proj.fc2.bias").unwrap().data,
        );
        for i in 0..3 {
            let mut h = vec![0.0; 64];
            for j in 0..64 {
                let mut acc = b1[j];
                for k in 0..32 {
                    acc += w1[j * 32 + k] * r[[i, k]];
                }
                h[j] = acc.max(0.0);
            }
            for d in 0..128 {
                let mut acc = b2[d];
                for j in 0..64 {
                    acc += w2[d * 64 + j] * h[j];
                }
                assert!((raw[[i, d]] - acc).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn dual_forward_shares_weights() {
        let model = Model::new(EncoderConfig::default(), 3).unwrap();
        let x1 = random_images(2, 32, 32, 1);
        let x2 = random_images(2, 32, 32, 2);
        let (a, b) = model.dual_forward(&x1, &x1).unwrap();
        assert_eq!(a, b);
        let (a, b) = model.dual_forward(&x1, &x2).unwrap();
        let (b2, a2) = model.dual_forward(&x2, &x1).unwrap();
        assert_eq!((a.clone(), b.clone()), (a2, b2));
        assert_ne!(a, b);
    }

    #[test]
    fn uniform_logits_give_log_classes() {
        let (loss, _) = softmax_cross_entropy(Array2::zeros((2, 4)).view(), &[0, 3]).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
        let mut prev = f64::INFINITY;
        for margin in [0.0, 1.0, 2.0, 5.0] {
            let logits = ndarray::array![[margin, 0.0, 0.0]];
            let (l, _) = softmax_cross_entropy(logits.view(), &[0]).unwrap();
            assert!(l < prev);
            prev = l;
        }
        assert!(softmax_cross_entropy(Array2::zeros((1, 2)).view(), &[2]).is_err());
    }

    #[test]
    fn cross_entropy_matches_scalar_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let logits = Array2::from_shape_fn((5, 4), |_| rng.random_range(-3.0..3.0));
        let labels = [0, 3, 1, 1, 2];
        let (loss, _) = softmax_cross_entropy(logits.view(), &labels).unwrap();
        let mut want = 0.0;
        for i in 0..5 {
            let denom: f64 = (0..4).map(|k| f64::exp(logits[[i, k]])).sum();
            want -= (f64::exp(logits[[i, labels[i]]]) / denom).ln();
        }
        assert!((loss - want / 5.0).abs() < 1e-10);
    }

    #[test]
    fn backward_requires_cache() {
        let model = Model::new(tiny(), 0).unwrap();
        let pass = model.forward(&random_images(2, 8, 8, 0), false).unwrap();
        assert!(matches!(
            model.backward(&pass, None, None),
            Err(Error::MissingCache)
        ));
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let model = Model::new(tiny(), 0).unwrap();
        let pass = model.forward(&random_images(2, 8, 8, 0), true).unwrap();
        let gp = Array2::zeros(pass.projections.raw_dim());
        let gl = Array2::zeros(pass.logits.raw_dim());
        let grads = model
            .backward(&pass, Some(gp.view()), Some(gl.view()))
            .unwrap();
        assert_eq!(grads.norm(), 0.0);
    }

    #[test]
    fn classifier_bias_matches_finite_difference() {
        let mut model = Model::new(tiny(), 7).unwrap();
        let images = random_images(3, 8, 8, 3);
        let labels = [0, 2, 1];
        let loss = |m: &Model| {
            let pass = m.forward(&images, false).unwrap();
            softmax_cross_entropy(pass.logits.view(), &labels)
                .unwrap()
                .0
        };
        let pass = model.forward(&images, true).unwrap();
        let (_, gl) = softmax_cross_entropy(pass.logits.view(), &labels).unwrap();
        let grads = model.backward(&pass, None, Some(gl.view())).unwrap();
        let analytic = grads.get("cls.bias").unwrap().data[1];
        let h = 1e-5;
        model.params.get_mut("cls.bias").unwrap().data[1] += h;
        let up = loss(&model);
        model.params.get_mut("cls.bias").unwrap().data[1] -= 2.0 * h;
        let down = loss(&model);
        let numeric = (up - down) / (2.0 * h);
        assert!((analytic - numeric).abs() < 1e-6, "{analytic} vs {numeric}");
    }

    #[test]
    fn wrong_image_size_rejected() {
        let model = Model::new(tiny(), 0).unwrap();
        assert!(model.encoder_forward(&Array4::zeros((1, 3, 9, 8))).is_err());
        assert!(model
            .classifier_forward(Array2::zeros((1, 7)).view())
            .is_err());
    }
}
