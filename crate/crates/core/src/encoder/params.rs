use rand::Rng;

use super::conv::conv_output_size;
use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_for};

/// A named, row-major tensor of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            name: name.into(),
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn from_data(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let name = name.into();
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::shape(format!("tensor {name}"), len, data.len()));
        }
        Ok(Self { name, shape, data })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Architecture of the encoder and its heads.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderConfig {
    pub input_h: usize,
    pub input_w: usize,
    /// Output channels of each 3x3 stride-2 stage.
    pub conv_channels: Vec<usize>,
    pub proj_hidden: usize,
    /// Projection output dimension `D`.
    pub proj_dim: usize,
    pub num_classes: usize,
    /// Single dense projection layer instead of the two-layer MLP.
    pub linear_projection: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            input_h: 32,
            input_w: 32,
            conv_channels: vec![8, 16, 32],
            proj_hidden: 64,
            proj_dim: 128,
            num_classes: 4,
            linear_projection: false,
        }
    }
}

impl EncoderConfig {
    /// Channels after global average pooling.
    pub fn feature_dim(&self) -> usize {
        *self.conv_channels.last().unwrap_or(&3)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.input_h == 0 || self.input_w == 0 {
            return bad("input dimensions must be positive".into());
        }
        if self.conv_channels.is_empty() || self.conv_channels.contains(&0) {
            return bad("need at least one conv stage with positive channels".into());
        }
        if self.proj_dim == 0 || (!self.linear_projection && self.proj_hidden == 0) {
            return bad("projection dimensions must be positive".into());
        }
        if self.num_classes < 2 {
            return bad(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            ));
        }
        Ok(())
    }

    /// Spatial size after each stage, starting from the input.
    pub fn spatial_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![(self.input_h, self.input_w)];
        for _ in &self.conv_channels {
            let &(h, w) = dims.last().unwrap();
            dims.push((conv_output_size(h), conv_output_size(w)));
        }
        dims
    }

    /// Expected tensor names and shapes, in storage order.
    pub fn tensor_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut cin = 3;
        for (i, &cout) in self.conv_channels.iter().enumerate() {
            out.push((format!("conv{i}.weight"), vec![cout, cin, 3, 3]));
            out.push((format!("conv{i}.bias"), vec![cout]));
            cin = cout;
        }
        let f = self.feature_dim();
        if self.linear_projection {
            out.push(("proj.fc1.weight".into(), vec![self.proj_dim, f]));
            out.push(("proj.fc1.bias".into(), vec![self.proj_dim]));
        } else {
            out.push(("proj.fc1.weight".into(), vec![self.proj_hidden, f]));
            out.push(("proj.fc1.bias".into(), vec![self.proj_hidden]));
            out.push((
                "proj.fc2.weight".into(),
                vec![self.proj_dim, self.proj_hidden],
            ));
            out.push(("proj.fc2.bias".into(), vec![self.proj_dim]));
        }
        out.push(("cls.weight".into(), vec![self.num_classes, f]));
        out.push(("cls.bias".into(), vec![self.num_classes]));
        out
    }

    /// Recover the architecture from a parameter set (input size is free
    /// since the encoder ends in global average pooling).
    pub fn from_params(params: &ModelParams, input_h: usize, input_w: usize) -> Result<Self> {
        let mut conv_channels = Vec::new();
        while let Some(t) = params.get(&format!("conv{}.weight", conv_channels.len())) {
            conv_channels.push(t.shape[0]);
        }
        let fc1 = params.require("proj.fc1.weight")?;
        let cls = params.require("cls.weight")?;
        let linear_projection = params.get("proj.fc2.weight").is_none();
        let (proj_hidden, proj_dim) = if linear_projection {
            (0, fc1.shape[0])
        } else {
            (fc1.shape[0], params.require("proj.fc2.weight")?.shape[0])
        };
        let cfg = Self {
            input_h,
            input_w,
            conv_channels,
            proj_hidden,
            proj_dim,
            num_classes: cls.shape[0],
            linear_projection,
        };
        cfg.validate()?;
        params.check_shapes(&cfg)?;
        Ok(cfg)
    }
}

/// All trainable tensors, addressable by name.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    tensors: Vec<Tensor>,
}

impl ModelParams {
    pub fn from_tensors(tensors: Vec<Tensor>) -> Self {
        Self { tensors }
    }

    pub fn zeros(config: &EncoderConfig) -> Self {
        Self {
            tensors: config
                .tensor_shapes()
                .into_iter()
                .map(|(name, shape)| Tensor::zeros(name, shape))
                .collect(),
        }
    }

    /// Uniform He initialization, `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`,
    /// with zero biases. Each tensor draws from its own seeded stream.
    pub fn init(config: &EncoderConfig, seed: u64) -> Self {
        let mut params = Self::zeros(config);
        for t in &mut params.tensors {
            if t.name.ends_with(".bias") {
                continue;
            }
            let fan_in: usize = t.shape[1..].iter().product();
            let bound = (6.0 / fan_in as f64).sqrt();
            let mut rng = rng_for(derive_seed(seed, &[b"init", t.name.as_bytes()]), 0);
            for v in &mut t.data {
                *v = rng.random_range(-bound..bound);
            }
        }
        params
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor::zeros(t.name.clone(), t.shape.clone()))
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.iter_mut().find(|t| t.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn into_tensors(self) -> Vec<Tensor> {
        self.tensors
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn norm(&self) -> f64 {
        self.tensors
            .iter()
            .map(|t| t.norm().powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors
            .iter()
            .all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// Accumulate `other` into `self` (same layout).
    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += y;
            }
        }
    }

    pub fn check_shapes(&self, config: &EncoderConfig) -> Result<()> {
        let expected = config.tensor_shapes();
        if expected.len() != self.tensors.len() {
            return Err(Error::shape(
                "parameter count",
                expected.len(),
                self.tensors.len(),
            ));
        }
        for ((name, shape), t) in expected.iter().zip(&self.tensors) {
            if name != &t.name || shape != &t.shape {
                return Err(Error::shape(
                    format!("tensor {name}"),
                    format!("{name} {shape:?}"),
                    format!("{} {:?}", t.name, t.shape),
                ));
            }
            if t.data.len() != shape.iter().product::<usize>() {
                return Err(Error::shape(
                    format!("tensor {name} data"),
                    shape.iter().product::<usize>(),
                    t.data.len(),
                ));
            }
        }
        Ok(())
    }
}
