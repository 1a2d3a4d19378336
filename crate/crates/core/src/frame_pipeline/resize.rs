use image::RgbImage;

use crate::error::{Error, Result};

/// Source taps and weight for one output coordinate along one axis.
#[derive(Clone, Copy)]
struct Tap {
    lo: u32,
    hi: u32,
    frac: f64,
}

/// Half-pixel-centre mapping with edge clamp: output centre `o + 0.5` maps to
/// source coordinate `(o + 0.5) * src / dst - 0.5`.
fn taps(src: u32, dst: u32) -> Vec<Tap> {
    let scale = src as f64 / dst as f64;
    let max = (src - 1) as f64;
    (0..dst)
        .map(|o| {
            let pos = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, max);
            let lo = pos.floor();
            let hi = (lo + 1.0).min(max);
            Tap {
                lo: lo as u32,
                hi: hi as u32,
                frac: pos - lo,
            }
        })
        .collect()
}

/// Bilinear resize to `cell_h x cell_w`, rounding each channel half-up.
///
/// Resizing to the source dimensions is the identity, bit for bit.
pub fn resize_frame(frame: &RgbImage, cell_h: u32, cell_w: u32) -> Result<RgbImage> {
    if cell_h == 0 || cell_w == 0 {
        return Err(Error::InvalidArgument(format!(
            "resize target {cell_w}x{cell_h} has a zero dimension"
        )));
    }
    let (src_w, src_h) = frame.dimensions();
    if src_w == 0 || src_h == 0 {
        return Err(Error::InvalidArgument(
            "cannot resize an empty frame".into(),
        ));
    }
    if (src_w, src_h) == (cell_w, cell_h) {
        return Ok(frame.clone());
    }
    let xs = taps(src_w, cell_w);
    let ys = taps(src_h, cell_h);
    let mut out = RgbImage::new(cell_w, cell_h);
    for (oy, ty) in ys.iter().enumerate() {
        for (ox, tx) in xs.iter().enumerate() {
            let p00 = frame.get_pixel(tx.lo, ty.lo);
            let p01 = frame.get_pixel(tx.hi, ty.lo);
            let p10 = frame.get_pixel(tx.lo, ty.hi);
            let p11 = frame.get_pixel(tx.hi, ty.hi);
            let px = out.get_pixel_mut(ox as u32, oy as u32);
            for c in 0..3 {
                let top = (1.0 - tx.frac) * p00[c] as f64 + tx.frac * p01[c] as f64;
                let bottom = (1.0 - tx.frac) * p10[c] as f64 + tx.frac * p11[c] as f64;
                let v = (1.0 - ty.frac) * top + ty.frac * bottom;
                px[c] = (v + 0.5).floor().clamp(0.0, 255.0) as u8;
            }
        }
    }
    Ok(out)
}
