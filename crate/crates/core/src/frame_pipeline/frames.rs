use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// An ordered list of equally sized RGB frames with a class label.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub frames: Vec<RgbImage>,
    pub label: usize,
    pub video_id: String,
}

impl FrameSequence {
    pub fn new(frames: Vec<RgbImage>, label: usize, video_id: impl Into<String>) -> Result<Self> {
        let video_id = video_id.into();
        let first = frames
            .first()
            .ok_or_else(|| Error::InvalidArgument(format!("video {video_id} has no frames")))?;
        let (w, h) = first.dimensions();
        if w == 0 || h == 0 {
            return Err(Error::InvalidArgument(format!(
                "video {video_id} has empty frames"
            )));
        }
        for (i, f) in frames.iter().enumerate() {
            if f.dimensions() != (w, h) {
                return Err(Error::FrameDimensions {
                    path: PathBuf::from(format!("{video_id}[{i}]")),
                    expected_w: w,
                    expected_h: h,
                    found_w: f.width(),
                    found_h: f.height(),
                });
            }
        }
        Ok(Self {
            frames,
            label,
            video_id,
        })
    }

    /// Frame count `T`.
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// `(width, height)` shared by all frames.
    pub fn dimensions(&self) -> (u32, u32) {
        self.frames[0].dimensions()
    }

    /// A copy with every frame resized to `cell_h x cell_w`.
    pub fn resized(&self, cell_h: u32, cell_w: u32) -> Result<Self> {
        let frames = self
            .frames
            .iter()
            .map(|f| super::resize_frame(f, cell_h, cell_w))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            frames,
            label: self.label,
            video_id: self.video_id.clone(),
        })
    }
}

fn frame_index(path: &Path) -> Result<u64> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .filter(|s| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit()))
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::FrameName(path.to_path_buf()))
}

fn is_frame_file(path: &Path) -> bool {
    path.is_file()
        && path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

/// Load every PNG frame in `dir`, ordered by the numeric file stem.
///
/// The video id defaults to the directory name.
pub fn load_frame_sequence(dir: &Path, label: usize) -> Result<FrameSequence> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if is_frame_file(&path) {
            files.push((frame_index(&path)?, path));
        }
    }
    if files.is_empty() {
        return Err(Error::EmptyDirectory(dir.to_path_buf()));
    }
    files.sort();

    let mut frames: Vec<RgbImage> = Vec::with_capacity(files.len());
    for (_, path) in &files {
        let img = image::open(path)
            .map_err(|source| Error::Image {
                path: path.clone(),
                source,
            })?
            .to_rgb8();
        if let Some(first) = frames.first() {
            if first.dimensions() != img.dimensions() {
                return Err(Error::FrameDimensions {
                    path: path.clone(),
                    expected_w: first.width(),
                    expected_h: first.height(),
                    found_w: img.width(),
                    found_h: img.height(),
                });
            }
        }
        frames.push(img);
    }

    let video_id = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string());
    FrameSequence::new(frames, label, video_id)
}

/// Write frames as zero-padded `NNN.png` files into `dir` (created if missing).
pub fn write_frame_sequence(seq: &FrameSequence, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let width = (seq.len().saturating_sub(1)).to_string().len().max(3);
    for (i, frame) in seq.frames.iter().enumerate() {
        let path = dir.join(format!("{i:0width$}.png"));
        frame
            .save(&path)
            .map_err(|source| Error::Image { path, source })?;
    }
    Ok(())
}

/// One line of a dataset manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: usize,
    pub video_id: String,
}

/// Parse a manifest: one `path,label,video_id` record per line.
///
/// Blank lines and lines starting with `#` are skipped. Relative paths are
/// resolved against the manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |message: String| Error::Manifest {
            path: path.to_path_buf(),
            line: lineno + 1,
            message,
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let [video_path, label, video_id] = fields[..] else {
            return Err(bad(format!(
                "expected 3 comma-separated fields, found {}",
                fields.len()
            )));
        };
        let label = label
            .parse()
            .map_err(|_| bad(format!("label {label:?} is not a non-negative integer")))?;
        if video_id.is_empty() {
            return Err(bad("empty video id".into()));
        }
        let video_path = Path::new(video_path);
        out.push(ManifestEntry {
            path: if video_path.is_absolute() {
                video_path.to_path_buf()
            } else {
                base.join(video_path)
            },
            label,
            video_id: video_id.to_string(),
        });
    }
    Ok(out)
}

/// Write a manifest. Paths under `base` are written relative to it.
pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let base = path.parent().unwrap_or(Path::new(""));
    let mut text = String::from("# path,label,video_id\n");
    for e in entries {
        let p = e.path.strip_prefix(base).unwrap_or(&e.path);
        text.push_str(&format!("{},{},{}\n", p.display(), e.label, e.video_id));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Load every video named in a manifest, in manifest order.
pub fn load_dataset(manifest: &Path) -> Result<Vec<FrameSequence>> {
    let entries = read_manifest(manifest)?;
    entries
        .par_iter()
        .map(|e| {
            let mut seq = load_frame_sequence(&e.path, e.label)?;
            seq.video_id = e.video_id.clone();
            Ok(seq)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    fn solid(w: u32, h: u32, v: u8) -> RgbImage {
        RgbImage::from_pixel(w, h, Rgb([v, v, v]))
    }

    #[test]
    fn loads_32_frames_in_index_order() {
        let dir = tempfile::tempdir().unwrap();
        let frames: Vec<_> = (0..32).map(|i| solid(4, 4, i as u8)).collect();
        let seq = FrameSequence::new(frames, 2, "v").unwrap();
        write_frame_sequence(&seq, dir.path()).unwrap();
        assert!(dir.path().join("000.png").exists());
        assert!(dir.path().join("031.png").exists());

        let loaded = load_frame_sequence(dir.path(), 2).unwrap();
        assert_eq!(loaded.len(), 32);
        assert_eq!(loaded.label, 2);
        for (i, f) in loaded.frames.iter().enumerate() {
            assert_eq!(f.get_pixel(0, 0)[0], i as u8);
        }
    }

    #[test]
    fn numeric_not_lexicographic_order() {
        let dir = tempfile::tempdir().unwrap();
        solid(2, 2, 10).save(dir.path().join("10.png")).unwrap();
        solid(2, 2, 9).save(dir.path().join("9.png")).unwrap();
        let seq = load_frame_sequence(dir.path(), 0).unwrap();
        assert_eq!(seq.frames[0].get_pixel(0, 0)[0], 9);
        assert_eq!(seq.frames[1].get_pixel(0, 0)[0], 10);
    }

    #[test]
    fn single_frame() {
        let dir = tempfile::tempdir().unwrap();
        solid(32, 32, 1).save(dir.path().join("000.png")).unwrap();
        assert_eq!(load_frame_sequence(dir.path(), 0).unwrap().len(), 1);
    }

    #[test]
    fn mixed_dimensions_name_the_file() {
        let dir = tempfile::tempdir().unwrap();
        solid(32, 32, 1).save(dir.path().join("000.png")).unwrap();
        solid(64, 64, 1).save(dir.path().join("001.png")).unwrap();
        let err = load_frame_sequence(dir.path(), 0).unwrap_err();
        assert!(matches!(err, Error::FrameDimensions { .. }));
        assert!(err.to_string().contains("001.png"), "{err}");
    }

    #[test]
    fn empty_directory() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_frame_sequence(dir.path(), 0),
            Err(Error::EmptyDirectory(_))
        ));
    }

    #[test]
    fn unreadable_file_is_named() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("000.png"), b"not a png").unwrap();
        let err = load_frame_sequence(dir.path(), 0).unwrap_err();
        assert!(err.to_string().contains("000.png"), "{err}");
    }

    #[test]
    fn non_numeric_name_rejected() {
        let dir = tempfile::tempdir().unwrap();
        solid(2, 2, 1).save(dir.path().join("frame_a.png")).unwrap();
        assert!(matches!(
            load_frame_sequence(dir.path(), 0),
            Err(Error::FrameName(_))
        ));
    }

    #[test]
    fn manifest_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("manifest.csv");
        let entries = vec![
            ManifestEntry {
                path: dir.path().join("videos/a"),
                label: 0,
                video_id: "a".into(),
            },
            ManifestEntry {
                path: dir.path().join("videos/b"),
                label: 3,
                video_id: "b".into(),
            },
        ];
        write_manifest(&m, &entries).unwrap();
        assert!(fs::read_to_string(&m).unwrap().contains("videos/a,0,a"));
        assert_eq!(read_manifest(&m).unwrap(), entries);

        fs::write(&m, "videos/a,zero,a\n").unwrap();
        let err = read_manifest(&m).unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
        fs::write(&m, "\n# c\nvideos/a,1\n").unwrap();
        assert!(read_manifest(&m)
            .unwrap_err()
            .to_string()
            .contains("line 3"));
    }
}
