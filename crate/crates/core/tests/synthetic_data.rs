//! The synthetic benchmark is written in the pipeline's input format and its
//! labels are recoverable from motion alone.

use image::RgbImage;
use scfa_core::frame_pipeline::{load_dataset, read_manifest};
use scfa_core::synthetic::{class_spec, Motion};
use scfa_core::{gen_synthetic_dataset, generate_videos, SynthConfig};

fn small() -> SynthConfig {
    SynthConfig {
        videos_per_class: 6,
        ..SynthConfig::default()
    }
}

#[test]
fn written_dataset_loads_back_identically() {
    let cfg = small();
    let dir = tempfile::tempdir().unwrap();
    let entries = gen_synthetic_dataset(&cfg, dir.path()).unwrap();
    assert_eq!(entries.len(), 24);
    let manifest = dir.path().join("manifest.csv");
    assert_eq!(read_manifest(&manifest).unwrap().len(), 24);
    let loaded = load_dataset(&manifest).unwrap();
    let generated = generate_videos(&cfg).unwrap();
    assert_eq!(loaded.len(), generated.len());
    for (a, b) in loaded.iter().zip(&generated) {
        assert_eq!(a.video_id, b.video_id);
        assert_eq!(a.label, b.label);
        assert_eq!(a.frames, b.frames);
    }
}

#[test]
fn balanced_classes_and_distinct_videos() {
    let videos = generate_videos(&small()).unwrap();
    for c in 0..4 {
        assert_eq!(videos.iter().filter(|v| v.label == c).count(), 6);
    }
    assert_ne!(videos[0].frames, videos[1].frames);
    assert!(videos
        .iter()
        .all(|v| v.len() == small().frames && v.dimensions() == (32, 32)));
}

/// Bright-pixel mask of a frame.
fn mask(frame: &RgbImage) -> Vec<bool> {
    frame
        .pixels()
        .map(|p| (p[0] as f64 + p[1] as f64 + p[2] as f64) / 3.0 > 120.0)
        .collect()
}

/// Toroidal shift `(dx, dy)` in `-6..=6` maximising the overlap of `b` with `a` shifted.
fn best_shift(a: &[bool], b: &[bool], w: usize, h: usize) -> (f64, f64) {
    let mut best = (0, 0, 0usize);
    for dy in -6i64..=6 {
        for dx in -6i64..=6 {
            let mut hits = 0;
            for y in 0..h {
                for x in 0..w {
                    if a[y * w + x] {
                        let xs = (x as i64 + dx).rem_euclid(w as i64) as usize;
                        let ys = (y as i64 + dy).rem_euclid(h as i64) as usize;
                        hits += usize::from(b[ys * w + xs]);
                    }
                }
            }
            if hits > best.2 {
                best = (dx, dy, hits);
            }
        }
    }
    (best.0 as f64, best.1 as f64)
}

/// Motion classifier built from mask tracking, independent of any learned model:
/// straight motions keep a constant step direction, orbits turn.
fn classify_motion(frames: &[RgbImage]) -> Motion {
    const GAP: usize = 3;
    let (w, h) = (frames[0].width() as usize, frames[0].height() as usize);
    let masks: Vec<Vec<bool>> = frames.iter().map(mask).collect();
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
    for k in 0..masks.len() - GAP {
        let (dx, dy) = best_shift(&masks[k], &masks[k + GAP], w, h);
        let len = (dx * dx + dy * dy).sqrt();
        if len > 0.0 {
            sx += dx / len;
            sy += dy / len;
            n += 1.0;
        }
    }
    let resultant = (sx * sx + sy * sy).sqrt() / n;
    if resultant < 0.8 {
        return Motion::Orbit;
    }
    let angle = sy.atan2(sx).to_degrees();
    if angle.abs() < 22.5 {
        Motion::Horizontal
    } else if (angle - 90.0).abs() < 22.5 {
        Motion::Vertical
    } else {
        Motion::Diagonal
    }
}

#[test]
fn labels_are_recoverable_from_motion() {
    let cfg = SynthConfig {
        videos_per_class: 10,
        ..SynthConfig::default()
    };
    let videos = generate_videos(&cfg).unwrap();
    let correct = videos
        .iter()
        .filter(|v| classify_motion(&v.frames) == class_spec(v.label).1)
        .count();
    let accuracy = correct as f64 / videos.len() as f64;
    assert!(accuracy >= 0.95, "motion oracle accuracy {accuracy}");
}

#[test]
fn rejects_invalid_configs() {
    for (k, v) in [
        ("num_classes", "1"),
        ("num_classes", "9"),
        ("frames", "0"),
        ("width", "8"),
        ("noise", "-1"),
    ] {
        let mut cfg = SynthConfig::default();
        cfg.set(k, v).unwrap();
        assert!(generate_videos(&cfg).is_err(), "{k}={v} accepted");
    }
    assert!(SynthConfig::default().set("colour", "1").is_err());
}
