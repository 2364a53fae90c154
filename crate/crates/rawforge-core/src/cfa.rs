//! Multi-Bayer mosaicking and classical demosaicing.
//!
//! The four supported patterns are the four phase shifts of one 2x2 quad.
//! Demosaicing offers bilinear averaging and the Malvar-He-Cutler 5x5
//! gradient-corrected kernels. Borders are handled by replicating the edge
//! quad (period-2), which keeps every tap on a sample of the correct color;
//! naive single-pixel replication would mix CFA phases.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{CaptureMetadata, ImagePlane, LinearImage, RawImage};

/// Color of a CFA site.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CfaColor {
    R,
    G,
    B,
}

/// 2x2 Bayer quad layout, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BayerPattern {
    Rggb,
    Bggr,
    Grbg,
    Gbrg,
}

impl BayerPattern {
    pub const ALL: [BayerPattern; 4] = [
        BayerPattern::Rggb,
        BayerPattern::Bggr,
        BayerPattern::Grbg,
        BayerPattern::Gbrg,
    ];

    /// Quad colors row-major: `[(0,0), (1,0), (0,1), (1,1)]`.
    pub fn quad(self) -> [CfaColor; 4] {
        use CfaColor::*;
        match self {
            BayerPattern::Rggb => [R, G, G, B],
            BayerPattern::Bggr => [B, G, G, R],
            BayerPattern::Grbg => [G, R, B, G],
            BayerPattern::Gbrg => [G, B, R, G],
        }
    }

    /// Color observed at pixel `(x, y)`.
    #[inline]
    pub fn color_at(self, x: usize, y: usize) -> CfaColor {
        self.quad()[(y & 1) * 2 + (x & 1)]
    }

    fn from_quad(quad: [CfaColor; 4]) -> BayerPattern {
        for p in Self::ALL {
            if p.quad() == quad {
                return p;
            }
        }
        unreachable!("every phase shift of a Bayer quad is a Bayer pattern")
    }
}

impl std::fmt::Display for BayerPattern {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            BayerPattern::Rggb => "rggb",
            BayerPattern::Bggr => "bggr",
            BayerPattern::Grbg => "grbg",
            BayerPattern::Gbrg => "gbrg",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for BayerPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rggb" => Ok(BayerPattern::Rggb),
            "bggr" => Ok(BayerPattern::Bggr),
            "grbg" => Ok(BayerPattern::Grbg),
            "gbrg" => Ok(BayerPattern::Gbrg),
            other => Err(Error::InvalidArgument(format!(
                "unknown bayer pattern '{other}' (expected rggb|bggr|grbg|gbrg)"
            ))),
        }
    }
}

/// Pattern observed after shifting the origin by `(dx, dy)`; period-2.
pub fn pattern_at_offset(pattern: BayerPattern, dx: isize, dy: isize) -> BayerPattern {
    let ox = dx.rem_euclid(2) as usize;
    let oy = dy.rem_euclid(2) as usize;
    let quad = [
        pattern.color_at(ox, oy),
        pattern.color_at(ox + 1, oy),
        pattern.color_at(ox, oy + 1),
        pattern.color_at(ox + 1, oy + 1),
    ];
    BayerPattern::from_quad(quad)
}

/// Samples one channel per site according to the pattern. Noise-free; the
/// result carries neutral metadata with the pattern set.
pub fn mosaic(x: &LinearImage, pattern: BayerPattern) -> Result<RawImage> {
    let (w, h) = (x.width(), x.height());
    if w % 2 != 0 || h % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "mosaic requires even dimensions, got {w}x{h}"
        )));
    }
    let plane = ImagePlane::from_fn(w, h, |px, py| match pattern.color_at(px, py) {
        CfaColor::R => x.r.get(px, py),
        CfaColor::G => x.g.get(px, py),
        CfaColor::B => x.b.get(px, py),
    });
    RawImage::new(plane, CaptureMetadata::neutral(pattern))
}

/// Reflects out-of-range indices back by one quad period. Valid for
/// overflows of at most 2, which covers the 5x5 kernels used here.
#[inline]
fn reflect2(i: isize, n: usize) -> usize {
    if i < 0 {
        (i + 2) as usize
    } else if i >= n as isize {
        i as usize - 2
    } else {
        i as usize
    }
}

struct RawView<'a> {
    plane: &'a ImagePlane,
}

impl RawView<'_> {
    #[inline]
    fn at(&self, x: isize, y: isize) -> f64 {
        let xx = reflect2(x, self.plane.width());
        let yy = reflect2(y, self.plane.height());
        self.plane.get(xx, yy) as f64
    }
}

fn demosaic_rows(
    raw: &RawImage,
    per_pixel: impl Fn(&RawView, isize, isize, CfaColor) -> [f64; 3] + Sync,
) -> LinearImage {
    let (w, h) = (raw.width(), raw.height());
    let view = RawView { plane: &raw.plane };
    let pattern = raw.pattern();
    let rows: Vec<[Vec<f32>; 3]> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut out = [Vec::with_capacity(w), Vec::with_capacity(w), Vec::with_capacity(w)];
            for x in 0..w {
                let rgb = per_pixel(&view, x as isize, y as isize, pattern.color_at(x, y));
                for c in 0..3 {
                    out[c].push(rgb[c].clamp(0.0, 1.0) as f32);
                }
            }
            out
        })
        .collect();
    let mut planes = [Vec::with_capacity(w * h), Vec::with_capacity(w * h), Vec::with_capacity(w * h)];
    for row in rows {
        for (c, data) in row.into_iter().enumerate() {
            planes[c].extend(data);
        }
    }
    let [r, g, b] = planes;
    LinearImage {
        r: ImagePlane::from_vec(w, h, r).expect("demosaic plane"),
        g: ImagePlane::from_vec(w, h, g).expect("demosaic plane"),
        b: ImagePlane::from_vec(w, h, b).expect("demosaic plane"),
    }
}

/// Bilinear demosaic: each missing color is the average of its nearest
/// same-color neighbors (2 or 4 taps); known samples pass through unchanged.
pub fn demosaic_bilinear(raw: &RawImage) -> LinearImage {
    let pattern = raw.pattern();
    demosaic_rows(raw, |v, x, y, color| {
        let center = v.at(x, y);
        let cross_g = (v.at(x - 1, y) + v.at(x + 1, y) + v.at(x, y - 1) + v.at(x, y + 1)) / 4.0;
        let diag = (v.at(x - 1, y - 1) + v.at(x + 1, y - 1) + v.at(x - 1, y + 1) + v.at(x + 1, y + 1)) / 4.0;
        let horiz = (v.at(x - 1, y) + v.at(x + 1, y)) / 2.0;
        let vert = (v.at(x, y - 1) + v.at(x, y + 1)) / 2.0;
        match color {
            CfaColor::R => [center, cross_g, diag],
            CfaColor::B => [diag, cross_g, center],
            CfaColor::G => {
                // Same-row neighbors carry either R or B depending on the phase.
                let row_is_r = pattern.color_at((x + 1) as usize, y as usize) == CfaColor::R;
                if row_is_r {
                    [horiz, center, vert]
                } else {
                    [vert, center, horiz]
                }
            }
        }
    })
}

/// Malvar-He-Cutler gradient-corrected demosaic (fixed 5x5 kernels).
pub fn demosaic_malvar(raw: &RawImage) -> Result<LinearImage> {
    if raw.width() < 6 || raw.height() < 6 {
        return Err(Error::InvalidArgument(format!(
            "malvar demosaic requires at least 6x6, got {}x{}",
            raw.width(),
            raw.height()
        )));
    }
    let pattern = raw.pattern();
    Ok(demosaic_rows(raw, |v, x, y, color| {
        let c = v.at(x, y);
        // Shared tap groups of the MHC kernels.
        let cross1 = v.at(x - 1, y) + v.at(x + 1, y) + v.at(x, y - 1) + v.at(x, y + 1);
        let cross2 = v.at(x - 2, y) + v.at(x + 2, y) + v.at(x, y - 2) + v.at(x, y + 2);
        let diag1 = v.at(x - 1, y - 1) + v.at(x + 1, y - 1) + v.at(x - 1, y + 1) + v.at(x + 1, y + 1);
        let horiz1 = v.at(x - 1, y) + v.at(x + 1, y);
        let horiz2 = v.at(x - 2, y) + v.at(x + 2, y);
        let vert1 = v.at(x, y - 1) + v.at(x, y + 1);
        let vert2 = v.at(x, y - 2) + v.at(x, y + 2);
        match color {
            CfaColor::R | CfaColor::B => {
                let g = (4.0 * c + 2.0 * cross1 - cross2) / 8.0;
                let opposite = (6.0 * c + 2.0 * diag1 - 1.5 * cross2) / 8.0;
                if color == CfaColor::R {
                    [c, g, opposite]
                } else {
                    [opposite, g, c]
                }
            }
            CfaColor::G => {
                let along_row = (5.0 * c + 4.0 * horiz1 - horiz2 - diag1 + 0.5 * vert2) / 8.0;
                let along_col = (5.0 * c + 4.0 * vert1 - vert2 - diag1 + 0.5 * horiz2) / 8.0;
                let row_is_r = pattern.color_at((x + 1) as usize, y as usize) == CfaColor::R;
                if row_is_r {
                    [along_row, c, along_col]
                } else {
                    [along_col, c, along_row]
                }
            }
        }
    }))
}

/// Optional pre-demosaic denoise: a 3x3 Gaussian (sigma 0.8) applied to each
/// of the four CFA phase planes independently, so colors never mix.
pub fn denoise_raw_gaussian(raw: &RawImage) -> RawImage {
    let sigma = 0.8f64;
    let mut taps = [0.0f64; 3];
    for (i, d2) in [0.0f64, 1.0, 2.0].iter().enumerate() {
        taps[i] = (-d2 / (2.0 * sigma * sigma)).exp();
    }
    let (w, h) = (raw.width(), raw.height());
    let plane = &raw.plane;
    let sub = |px: usize, py: usize, i: isize, j: isize| -> f64 {
        let nx = (w - px).div_ceil(2) as isize;
        let ny = (h - py).div_ceil(2) as isize;
        let ci = i.clamp(0, nx - 1) as usize;
        let cj = j.clamp(0, ny - 1) as usize;
        plane.get(px + 2 * ci, py + 2 * cj) as f64
    };
    let out = ImagePlane::from_fn(w, h, |x, y| {
        let (px, py) = (x & 1, y & 1);
        let (i, j) = (((x - px) / 2) as isize, ((y - py) / 2) as isize);
        let mut num = 0.0;
        let mut den = 0.0;
        for dj in -1..=1isize {
            for di in -1..=1isize {
                let wgt = taps[(di * di) as usize] * taps[(dj * dj) as usize];
                num += wgt * sub(px, py, i + di, j + dj);
                den += wgt;
            }
        }
        (num / den).clamp(0.0, 1.0) as f32
    });
    RawImage {
        plane: out,
        meta: raw.meta.clone(),
    }
}
