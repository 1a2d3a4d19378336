use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::optim::AdamConfig;
use crate::encoder::{EncoderConfig, Preprocess};
use crate::error::{Error, Result};
use crate::frame_pipeline::{GridLayout, SamplingMode, SamplingPlan};

/// Everything that determines a training or evaluation run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub frames_per_view: usize,
    pub sampling_mode: SamplingMode,
    pub grid_rows: u32,
    pub grid_cols: u32,
    pub cell_h: u32,
    pub cell_w: u32,

    /// Videos per contrastive batch `N` (each contributes two views).
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub adam: AdamConfig,
    pub tau: f64,

    pub conv_channels: Vec<usize>,
    pub proj_hidden: usize,
    pub proj_dim: usize,
    pub linear_projection: bool,
    pub pixel_mean: [f64; 3],
    pub pixel_std: [f64; 3],

    /// Seeds parameter init, batch order and temporal sampling.
    pub seed: u64,
    /// Seeds the stratified train/test split.
    pub split_seed: u64,
    pub train_fraction: f64,

    pub probe_epochs: usize,
    pub probe_lr: f64,
    /// Temporal views per training video used to fit the probe.
    pub probe_views: usize,
    pub finetune_epochs: usize,
    pub finetune_lr: f64,
    pub eval_seeds: usize,

    pub manifest: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            frames_per_view: 16,
            sampling_mode: SamplingMode::WithoutReplacement,
            grid_rows: 4,
            grid_cols: 4,
            cell_h: 8,
            cell_w: 8,
            batch_size: 64,
            epochs: 100,
            lr_max: 1e-3,
            lr_min: 0.0,
            adam: AdamConfig::default(),
            tau: 0.07,
            conv_channels: vec![8, 16, 32, 6],
            proj_hidden: 64,
            proj_dim: 128,
            linear_projection: false,
            pixel_mean: [0.0; 3],
            pixel_std: [1.0; 3],
            seed: 0,
            split_seed: 0,
            train_fraction: 0.8,
            probe_epochs: 1000,
            probe_lr: 0.05,
            probe_views: 4,
            finetune_epochs: 20,
            finetune_lr: 1e-3,
            eval_seeds: 5,
            manifest: None,
            out_dir: None,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_triple(key: &str, value: &str) -> Result<[f64; 3]> {
    let parts: Vec<f64> = value
        .split(',')
        .map(|v| parse(key, v.trim()))
        .collect::<Result<_>>()?;
    parts
        .try_into()
        .map_err(|_| Error::Config(format!("{key} needs three comma-separated values")))
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl TrainConfig {
    pub fn layout(&self) -> Result<GridLayout> {
        GridLayout::new(self.grid_rows, self.grid_cols, self.cell_h, self.cell_w)
    }

    pub fn plan(&self) -> SamplingPlan {
        SamplingPlan {
            frames_per_view: self.frames_per_view,
            mode: self.sampling_mode,
            seed: self.seed,
        }
    }

    pub fn preprocess(&self) -> Preprocess {
        Preprocess {
            mean: self.pixel_mean,
            std: self.pixel_std,
        }
    }

    pub fn encoder_config(&self, num_classes: usize) -> EncoderConfig {
        EncoderConfig {
            input_h: (self.grid_rows * self.cell_h) as usize,
            input_w: (self.grid_cols * self.cell_w) as usize,
            conv_channels: self.conv_channels.clone(),
            proj_hidden: self.proj_hidden,
            proj_dim: self.proj_dim,
            num_classes,
            linear_projection: self.linear_projection,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let layout = self.layout()?;
        if self.frames_per_view == 0 {
            return bad("frames_per_view must be positive".into());
        }
        if self.frames_per_view > layout.capacity() {
            return bad(format!(
                "frames_per_view {} exceeds the {}x{} grid",
                self.frames_per_view, self.grid_rows, self.grid_cols
            ));
        }
        if self.batch_size < 2 {
            return bad(format!(
                "batch_size must be at least 2, got {}",
                self.batch_size
            ));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.lr_min >= 0.0 && self.lr_max >= self.lr_min && self.lr_max.is_finite()) {
            return bad(format!(
                "need 0 <= lr_min <= lr_max, got {} and {}",
                self.lr_min, self.lr_max
            ));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!(
                "train_fraction must be in (0, 1), got {}",
                self.train_fraction
            ));
        }
        if self.pixel_std.iter().any(|&s| !(s > 0.0 && s.is_finite()))
            || self.pixel_mean.iter().any(|m| !m.is_finite())
        {
            return bad("pixel_mean must be finite and pixel_std entries positive".into());
        }
        if self.probe_views == 0 || self.eval_seeds == 0 {
            return bad("probe_views and eval_seeds must be positive".into());
        }
        self.encoder_config(2).validate()
    }

    /// Set one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "frames_per_view" => self.frames_per_view = parse(key, value)?,
            "sampling_mode" => self.sampling_mode = value.parse()?,
            "grid_rows" => self.grid_rows = parse(key, value)?,
            "grid_cols" => self.grid_cols = parse(key, value)?,
            "cell_h" => self.cell_h = parse(key, value)?,
            "cell_w" => self.cell_w = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "lr_max" => self.lr_max = parse(key, value)?,
            "lr_min" => self.lr_min = parse(key, value)?,
            "beta1" => self.adam.beta1 = parse(key, value)?,
            "beta2" => self.adam.beta2 = parse(key, value)?,
            "adam_eps" => self.adam.eps = parse(key, value)?,
            "tau" => self.tau = parse(key, value)?,
            "conv_channels" => {
                self.conv_channels = value
                    .split(',')
                    .map(|v| parse(key, v.trim()))
                    .collect::<Result<_>>()?
            }
            "proj_hidden" => self.proj_hidden = parse(key, value)?,
            "proj_dim" => self.proj_dim = parse(key, value)?,
            "linear_projection" => self.linear_projection = parse(key, value)?,
            "pixel_mean" => self.pixel_mean = parse_triple(key, value)?,
            "pixel_std" => self.pixel_std = parse_triple(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "split_seed" => self.split_seed = parse(key, value)?,
            "train_fraction" => self.train_fraction = parse(key, value)?,
            "probe_epochs" => self.probe_epochs = parse(key, value)?,
            "probe_lr" => self.probe_lr = parse(key, value)?,
            "probe_views" => self.probe_views = parse(key, value)?,
            "finetune_epochs" => self.finetune_epochs = parse(key, value)?,
            "finetune_lr" => self.finetune_lr = parse(key, value)?,
            "eval_seeds" => self.eval_seeds = parse(key, value)?,
            "manifest" => self.manifest = Some(PathBuf::from(value)),
            "out_dir" => self.out_dir = Some(PathBuf::from(value)),
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Apply `key=value` lines; `#` comments and blank lines are ignored.
    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got {line:?}", n + 1))
            })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_kv(&text)?;
        Ok(cfg)
    }

    /// Every resolved field as `key=value` lines, accepted by [`apply_kv`](Self::apply_kv).
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("frames_per_view", self.frames_per_view.to_string());
        kv("sampling_mode", self.sampling_mode.to_string());
        kv("grid_rows", self.grid_rows.to_string());
        kv("grid_cols", self.grid_cols.to_string());
        kv("cell_h", self.cell_h.to_string());
        kv("cell_w", self.cell_w.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("epochs", self.epochs.to_string());
        kv("lr_max", self.lr_max.to_string());
        kv("lr_min", self.lr_min.to_string());
        kv("beta1", self.adam.beta1.to_string());
        kv("beta2", self.adam.beta2.to_string());
        kv("adam_eps", self.adam.eps.to_string());
        kv("tau", self.tau.to_string());
        kv("conv_channels", join(&self.conv_channels));
        kv("proj_hidden", self.proj_hidden.to_string());
        kv("proj_dim", self.proj_dim.to_string());
        kv("linear_projection", self.linear_projection.to_string());
        kv("pixel_mean", join(&self.pixel_mean));
        kv("pixel_std", join(&self.pixel_std));
        kv("seed", self.seed.to_string());
        kv("split_seed", self.split_seed.to_string());
        kv("train_fraction", self.train_fraction.to_string());
        kv("probe_epochs", self.probe_epochs.to_string());
        kv("probe_lr", self.probe_lr.to_string());
        kv("probe_views", self.probe_views.to_string());
        kv("finetune_epochs", self.finetune_epochs.to_string());
        kv("finetune_lr", self.finetune_lr.to_string());
        kv("eval_seeds", self.eval_seeds.to_string());
        if let Some(p) = &self.manifest {
            kv("manifest", p.display().to_string());
        }
        if let Some(p) = &self.out_dir {
            kv("out_dir", p.display().to_string());
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let cfg = TrainConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.encoder_config(4).input_h, 32);
        assert_eq!(cfg.layout().unwrap().capacity(), 16);
    }

    #[test]
    fn kv_round_trip() {
        let mut cfg = TrainConfig::default();
        cfg.apply_kv("# run\nepochs = 7\ntau=0.5\nconv_channels=4,8\npixel_std=0.5,0.5,0.25\nsampling_mode=with_replacement\nmanifest=data/m.csv\n")
            .unwrap();
        assert_eq!(cfg.epochs, 7);
        assert_eq!(cfg.conv_channels, vec![4, 8]);
        assert_eq!(cfg.pixel_std, [0.5, 0.5, 0.25]);
        let mut back = TrainConfig::default();
        back.apply_kv(&cfg.to_kv()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn bad_inputs() {
        let mut cfg = TrainConfig::default();
        assert!(cfg.set("learning_rate", "1").is_err());
        assert!(cfg.set("epochs", "many").is_err());
        assert!(cfg.apply_kv("epochs").is_err());
        for (k, v) in [
            ("batch_size", "1"),
            ("tau", "0"),
            ("epochs", "0"),
            ("frames_per_view", "17"),
        ] {
            let mut c = TrainConfig::default();
            c.set(k, v).unwrap();
            assert!(c.validate().is_err(), "{k}={v} accepted");
        }
    }
}
