//! Procedural labelled toy videos: one moving shape per video.
//!
//! Each class pairs a shape with a motion pattern. Classes come in pairs that
//! share a shape and differ only in motion, so single frames cannot separate
//! them. Motion happens on a torus (shapes wrap at the borders), and each
//! video is the class template shifted by a random whole-pixel offset, with
//! optional speed/phase jitter and background noise on top.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::frame_pipeline::{write_frame_sequence, write_manifest, FrameSequence, ManifestEntry};
use crate::seed::{derive_seed, rng_for};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Circle,
    Square,
    Triangle,
    Cross,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Motion {
    Horizontal,
    Vertical,
    Diagonal,
    Orbit,
}

const SHAPES: [Shape; 4] = [Shape::Circle, Shape::Square, Shape::Triangle, Shape::Cross];
const MOTIONS: [Motion; 4] = [
    Motion::Horizontal,
    Motion::Vertical,
    Motion::Diagonal,
    Motion::Orbit,
];
pub const MAX_CLASSES: usize = 8;

/// Shape and motion of class `c`: classes `2k` and `2k + 1` share a shape.
pub fn class_spec(class: usize) -> (Shape, Motion) {
    (SHAPES[(class / 2) % 4], MOTIONS[class % 4])
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub videos_per_class: usize,
    /// Frames per video `T`.
    pub frames: usize,
    pub height: u32,
    pub width: u32,
    /// Half-width of the uniform per-pixel background noise, in 8-bit units.
    pub noise: f64,
    /// Relative speed jitter; also scales orbit radius and phase jitter.
    pub speed_jitter: f64,
    /// Shape size multiplier; 1.0 gives a radius-4 circle in a 32-pixel frame.
    pub shape_scale: f64,
    /// Per-video colour randomisation in `[0, 1]`: 0 keeps the fixed palette,
    /// 1 draws foreground and background levels uniformly.
    pub color_jitter: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_classes: 4,
            videos_per_class: 50,
            frames: 32,
            height: 32,
            width: 32,
            noise: 8.0,
            speed_jitter: 0.2,
            shape_scale: 1.5,
            color_jitter: 0.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(2..=MAX_CLASSES).contains(&self.num_classes) {
            return Err(Error::Config(format!(
                "num_classes must be in 2..={MAX_CLASSES}, got {}",
                self.num_classes
            )));
        }
        if self.videos_per_class == 0 || self.frames == 0 {
            return Err(Error::Config(
                "videos_per_class and frames must be positive".into(),
            ));
        }
        if self.height < 16 || self.width < 16 {
            return Err(Error::Config("frames must be at least 16x16".into()));
        }
        if self.noise < 0.0 || self.speed_jitter < 0.0 {
            return Err(Error::Config(
                "noise and speed_jitter must be non-negative".into(),
            ));
        }
        if !(self.shape_scale > 0.0 && self.shape_scale.is_finite()) {
            return Err(Error::Config(format!(
                "shape_scale must be positive, got {}",
                self.shape_scale
            )));
        }
        if !(0.0..=1.0).contains(&self.color_jitter) {
            return Err(Error::Config(format!(
                "color_jitter must be in [0, 1], got {}",
                self.color_jitter
            )));
        }
        Ok(())
    }

    pub fn video_id(&self, class: usize, index: usize) -> String {
        format!("c{class}_v{index:03}")
    }
}

const BACKGROUND: f64 = 40.0;
const FOREGROUND: [f64; 3] = [230.0, 190.0, 70.0];

/// Signed offset from `c` to `p` on a circle of circumference `len`.
fn wrap(p: f64, c: f64, len: f64) -> f64 {
    let d = (p - c).rem_euclid(len);
    if d >= len / 2.0 {
        d - len
    } else {
        d
    }
}

fn inside(shape: Shape, dx: f64, dy: f64) -> bool {
    match shape {
        Shape::Circle => dx * dx + dy * dy <= 16.0,
        Shape::Square => dx.abs() <= 3.5 && dy.abs() <= 3.5,
        Shape::Triangle => (-4.0..=4.0).contains(&dy) && dx.abs() <= (dy + 4.0) / 2.0 + 0.25,
        Shape::Cross => {
            (dx.abs() <= 1.5 && dy.abs() <= 4.5) || (dy.abs() <= 1.5 && dx.abs() <= 4.5)
        }
    }
}

struct Trajectory {
    motion: Motion,
    speed: f64,
    radius: f64,
    phase: f64,
}

impl Trajectory {
    /// Template centre at frame `t`, before the per-video offset.
    fn centre(&self, t: usize, w: f64, h: f64) -> (f64, f64) {
        let t = t as f64;
        match self.motion {
            Motion::Horizontal => (self.speed * t, 0.0),
            Motion::Vertical => (0.0, self.speed * t),
            Motion::Diagonal => (self.speed * t / 2f64.sqrt(), self.speed * t / 2f64.sqrt()),
            Motion::Orbit => {
                let a = self.phase + self.speed * t / self.radius;
                (
                    self.radius * a.cos() + w / 2.0,
                    self.radius * a.sin() + h / 2.0,
                )
            }
        }
    }
}

/// Render video `index` of class `class`.
pub fn render_video(config: &SynthConfig, class: usize, index: usize) -> FrameSequence {
    let (shape, motion) = class_spec(class);
    let (w, h) = (config.width, config.height);
    let (wf, hf) = (w as f64, h as f64);
    let video_seed = derive_seed(
        config.seed,
        &[
            b"video",
            &(class as u64).to_le_bytes(),
            &(index as u64).to_le_bytes(),
        ],
    );
    let mut rng = rng_for(video_seed, 0);
    let jitter = |rng: &mut rand_chacha::ChaCha8Rng| {
        if config.speed_jitter > 0.0 {
            1.0 + config.speed_jitter * rng.random_range(-1.0..1.0)
        } else {
            1.0
        }
    };
    let base_speed = wf / config.frames as f64;
    let traj = Trajectory {
        motion,
        speed: base_speed * jitter(&mut rng),
        radius: wf / 4.0 * jitter(&mut rng),
        phase: PI * (jitter(&mut rng) - 1.0),
    };
    // whole-pixel start offset within the central half of the frame
    let off_x = rng.random_range(w / 4..3 * w / 4);
    let off_y = rng.random_range(h / 4..3 * h / 4);
    let scale = config.shape_scale * wf / 32.0;
    let mut level = |base: f64, lo: f64, hi: f64| {
        let drawn = rng.random_range(lo..=hi);
        (base + config.color_jitter * (drawn - base)).round() as u8
    };
    let foreground = FOREGROUND.map(|v| level(v, 120.0, 255.0));
    let background = level(BACKGROUND, 0.0, 80.0);

    let frames = (0..config.frames)
        .map(|t| {
            let (cx, cy) = traj.centre(t, wf, hf);
            let template = RgbImage::from_fn(w, h, |x, y| {
                let dx = wrap(x as f64 + 0.5, cx, wf);
                let dy = wrap(y as f64 + 0.5, cy, hf);
                if inside(shape, dx / scale, dy / scale) {
                    Rgb(foreground)
                } else {
                    Rgb([background; 3])
                }
            });
            let mut frame = RgbImage::new(w, h);
            for (x, y, p) in template.enumerate_pixels() {
                frame.put_pixel((x + off_x) % w, (y + off_y) % h, *p);
            }
            if config.noise > 0.0 {
                for p in frame.pixels_mut() {
                    for c in 0..3 {
                        let v = p[c] as f64 + rng.random_range(-config.noise..=config.noise);
                        p[c] = v.round().clamp(0.0, 255.0) as u8;
                    }
                }
            }
            frame
        })
        .collect();
    FrameSequence::new(frames, class, config.video_id(class, index))
        .expect("non-empty uniform frames")
}

/// Render the whole dataset in memory, class-major order.
pub fn generate_videos(config: &SynthConfig) -> Result<Vec<FrameSequence>> {
    config.validate()?;
    Ok((0..config.num_classes * config.videos_per_class)
        .into_par_iter()
        .map(|k| {
            render_video(
                config,
                k / config.videos_per_class,
                k % config.videos_per_class,
            )
        })
        .collect())
}

/// Write `out_dir/videos/<video_id>/NNN.png` for every video and
/// `out_dir/manifest.csv`. Returns the manifest entries.
pub fn gen_synthetic_dataset(config: &SynthConfig, out_dir: &Path) -> Result<Vec<ManifestEntry>> {
    config.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let videos_dir = out_dir.join("videos");
    let entries = (0..config.num_classes * config.videos_per_class)
        .into_par_iter()
        .map(|k| {
            let video = render_video(
                config,
                k / config.videos_per_class,
                k % config.videos_per_class,
            );
            let dir = videos_dir.join(&video.video_id);
            write_frame_sequence(&video, &dir)?;
            Ok(ManifestEntry {
                path: dir,
                label: video.label,
                video_id: video.video_id,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_manifest(&out_dir.join("manifest.csv"), &entries)?;
    Ok(entries)
}

impl SynthConfig {
    /// `key=value` lines for every field.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "num_classes={}", self.num_classes);
        let _ = writeln!(s, "videos_per_class={}", self.videos_per_class);
        let _ = writeln!(s, "frames={}", self.frames);
        let _ = writeln!(s, "height={}", self.height);
        let _ = writeln!(s, "width={}", self.width);
        let _ = writeln!(s, "noise={}", self.noise);
        let _ = writeln!(s, "speed_jitter={}", self.speed_jitter);
        let _ = writeln!(s, "shape_scale={}", self.shape_scale);
        let _ = writeln!(s, "color_jitter={}", self.color_jitter);
        let _ = writeln!(s, "seed={}", self.seed);
        s
    }

    /// Set one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = || Error::Config(format!("invalid value {value:?} for {key}"));
        match key {
            "num_classes" => self.num_classes = value.parse().map_err(|_| bad())?,
            "videos_per_class" => self.videos_per_class = value.parse().map_err(|_| bad())?,
            "frames" => self.frames = value.parse().map_err(|_| bad())?,
            "height" => self.height = value.parse().map_err(|_| bad())?,
            "width" => self.width = value.parse().map_err(|_| bad())?,
            "noise" => self.noise = value.parse().map_err(|_| bad())?,
            "speed_jitter" => self.speed_jitter = value.parse().map_err(|_| bad())?,
            "shape_scale" => self.shape_scale = value.parse().map_err(|_| bad())?,
            "color_jitter" => self.color_jitter = value.parse().map_err(|_| bad())?,
            "seed" => self.seed = value.parse().map_err(|_| bad())?,
            _ => return Err(Error::Config(format!("unknown synthetic-data key {key:?}"))),
        }
        Ok(())
    }
}
