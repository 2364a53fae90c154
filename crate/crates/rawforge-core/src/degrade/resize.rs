//! Separable resampling: bilinear, Catmull-Rom bicubic, and box-area.
//!
//! Output dimensions are forced even (downstream mosaicking needs full Bayer
//! quads) and sampling uses half-pixel center alignment, so scale 1 is the
//! identity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImagePlane;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResizeFilter {
    Bilinear,
    /// Catmull-Rom cubic (a = -0.5).
    Bicubic,
    /// Box average over the source footprint.
    Area,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResizeSpec {
    pub scale: f64,
    pub filter: ResizeFilter,
}

impl ResizeSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.scale.is_finite() || self.scale <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "resize scale must be positive, got {}",
                self.scale
            )));
        }
        Ok(())
    }
}

/// Even output size for `len` scaled by `scale`, at least 2.
pub fn even_target(len: usize, scale: f64) -> usize {
    let raw = (len as f64 * scale).round() as usize;
    let even = if raw % 2 == 1 { raw + 1 } else { raw };
    even.max(2)
}

fn catmull_rom(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        1.5 * x * x * x - 2.5 * x * x + 1.0
    } else if x < 2.0 {
        -0.5 * (x * x * x - 5.0 * x * x + 8.0 * x - 4.0)
    } else {
        0.0
    }
}

/// Per-output-index source taps `(index, weight)` for one axis.
fn axis_taps(in_len: usize, out_len: usize, filter: ResizeFilter) -> Vec<Vec<(usize, f64)>> {
    let ratio = in_len as f64 / out_len as f64;
    let clamp = |i: isize| i.clamp(0, in_len as isize - 1) as usize;
    (0..out_len)
        .map(|o| {
            let mut taps: Vec<(usize, f64)> = Vec::with_capacity(4);
            match filter {
                ResizeFilter::Bilinear => {
                    let sx = (o as f64 + 0.5) * ratio - 0.5;
                    let i0 = sx.floor();
                    let f = sx - i0;
                    taps.push((clamp(i0 as isize), 1.0 - f));
                    if f > 0.0 {
                        taps.push((clamp(i0 as isize + 1), f));
                    }
                }
                ResizeFilter::Bicubic => {
                    let sx = (o as f64 + 0.5) * ratio - 0.5;
                    let i0 = sx.floor() as isize;
                    let f = sx - i0 as f64;
                    for k in -1..=2isize {
                        let w = catmull_rom(f - k as f64);
                        if w != 0.0 {
                            taps.push((clamp(i0 + k), w));
                        }
                    }
                }
                ResizeFilter::Area => {
                    let lo = o as f64 * ratio;
                    let hi = (o + 1) as f64 * ratio;
                    let first = lo.floor() as usize;
                    let last = (hi.ceil() as usize).min(in_len);
                    for i in first..last {
                        let overlap = (hi.min((i + 1) as f64) - lo.max(i as f64)).max(0.0);
                        if overlap > 0.0 {
                            taps.push((i, overlap));
                        }
                    }
                }
            }
            // Clamped taps can double up on an edge index; merging keeps the
            // weight sum exact.
            taps.sort_by_key(|&(i, _)| i);
            taps.dedup_by(|a, b| {
                if a.0 == b.0 {
                    b.1 += a.1;
                    true
                } else {
                    false
                }
            });
            let total: f64 = taps.iter().map(|&(_, w)| w).sum();
            for t in &mut taps {
                t.1 /= total;
            }
            taps
        })
        .collect()
}

/// Resamples a plane to `out_w x out_h`. Output clamped to `[0, 1]`
/// (bicubic overshoots).
pub fn resize_plane(
    plane: &ImagePlane,
    out_w: usize,
    out_h: usize,
    filter: ResizeFilter,
) -> Result<ImagePlane> {
    if out_w < 2 || out_h < 2 || !out_w.is_multiple_of(2) || !out_h.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "resize target {out_w}x{out_h} must be even and at least 2x2"
        )));
    }
    let (in_w, in_h) = (plane.width(), plane.height());

    // Horizontal pass into f64 scratch.
    let htaps = axis_taps(in_w, out_w, filter);
    let mut mid = vec![0.0f64; out_w * in_h];
    for y in 0..in_h {
        for (o, taps) in htaps.iter().enumerate() {
            let mut acc = 0.0;
            for &(i, w) in taps {
                acc += w * plane.get(i, y) as f64;
            }
            mid[y * out_w + o] = acc;
        }
    }

    // Vertical pass.
    let vtaps = axis_taps(in_h, out_h, filter);
    let mut data = Vec::with_capacity(out_w * out_h);
    for taps in vtaps.iter() {
        for x in 0..out_w {
            let mut acc = 0.0;
            for &(j, w) in taps {
                acc += w * mid[j * out_w + x];
            }
            data.push(acc.clamp(0.0, 1.0) as f32);
        }
    }
    Ok(ImagePlane::from_vec(out_w, out_h, data).expect("resized plane"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scale_one_is_identity() {
        let plane = ImagePlane::from_fn(10, 8, |x, y| ((x * 13 + y * 7) % 17) as f32 / 17.0);
        for filter in [ResizeFilter::Bilinear, ResizeFilter::Bicubic, ResizeFilter::Area] {
            let out = resize_plane(&plane, 10, 8, filter).unwrap();
            for (a, b) in out.data().iter().zip(plane.data()) {
                assert!((a - b).abs() < 1e-6, "{filter:?}");
            }
        }
    }

    #[test]
    fn constant_stays_constant() {
        let plane = ImagePlane::filled(12, 10, 0.37);
        for filter in [ResizeFilter::Bilinear, ResizeFilter::Bicubic, ResizeFilter::Area] {
            for (ow, oh) in [(6, 4), (8, 8), (16, 14), (4, 10)] {
                let out = resize_plane(&plane, ow, oh, filter).unwrap();
                for &v in out.data() {
                    assert!((v - 0.37).abs() < 1e-6, "{filter:?} {ow}x{oh} -> {v}");
                }
            }
        }
    }

    #[test]
    fn checkerboard_halves_to_uniform_gray() {
        // Brute-force 8x8: bilinear 0.5x of a 2x2-periodic checkerboard
        // lands each output sample exactly between four sources.
        let plane = ImagePlane::from_fn(8, 8, |x, y| ((x + y) % 2) as f32);
        let out = resize_plane(&plane, 4, 4, ResizeFilter::Bilinear).unwrap();
        for &v in out.data() {
            assert!((v - 0.5).abs() < 1e-6, "got {v}");
        }
    }

    #[test]
    fn even_target_rounding() {
        assert_eq!(even_target(100, 1.0), 100);
        assert_eq!(even_target(100, 0.5), 50);
        assert_eq!(even_target(7, 1.0), 8);
        assert_eq!(even_target(10, 0.33), 4);
        assert_eq!(even_target(4, 0.25), 2);
        assert_eq!(even_target(2, 0.25), 2);
    }

    #[test]
    fn invalid_target_rejected() {
        let plane = ImagePlane::filled(8, 8, 0.5);
        assert!(resize_plane(&plane, 5, 4, ResizeFilter::Bilinear).is_err());
        assert!(resize_plane(&plane, 0, 4, ResizeFilter::Bilinear).is_err());
    }

    #[test]
    fn area_downscale_averages_blocks() {
        let plane = ImagePlane::from_fn(8, 8, |x, _| (x / 4) as f32);
        let out = resize_plane(&plane, 2, 2, ResizeFilter::Area).unwrap();
        assert!((out.get(0, 0) - 0.0).abs() < 1e-7);
        assert!((out.get(1, 0) - 1.0).abs() < 1e-7);
    }
}
