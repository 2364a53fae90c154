//! JPEG distortion model: 8x8 block DCT quantization without entropy coding.
//!
//! Entropy coding is lossless, so quantizing DCT coefficients with the
//! standard luma/chroma tables (scaled by the libjpeg quality law) captures
//! the full distortion. No chroma subsampling. YCbCr is BT.601 full range.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{ImagePlane, SrgbImage};
use crate::ptp::invert3;

/// Annex K luminance quantization table, natural (row-major) order.
const LUMA_QUANT: [i32; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// Annex K chrominance quantization table.
const CHROMA_QUANT: [i32; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99, //
    18, 21, 26, 66, 99, 99, 99, 99, //
    24, 26, 56, 99, 99, 99, 99, 99, //
    47, 66, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99,
];

/// libjpeg quality law: percentage scaling of the base tables, clamped to
/// `[1, 255]` per entry.
pub fn scaled_quant_table(base: &[i32; 64], quality: u8) -> [f64; 64] {
    let q = quality as i32;
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let mut out = [0.0; 64];
    for (o, &b) in out.iter_mut().zip(base) {
        *o = ((b * scale + 50) / 100).clamp(1, 255) as f64;
    }
    out
}

/// Orthonormal 8x8 DCT-II basis, `C[u][x]`.
fn dct_matrix() -> [[f64; 8]; 8] {
    let mut c = [[0.0; 8]; 8];
    for u in 0..8 {
        let alpha = if u == 0 { (0.5f64).sqrt() } else { 1.0 };
        for x in 0..8 {
            c[u][x] = 0.5 * alpha * ((2 * x + 1) as f64 * u as f64 * std::f64::consts::PI / 16.0).cos();
        }
    }
    c
}

/// Quantizes one 8x8 block in place: DCT, round to table steps, inverse DCT.
fn quantize_block(block: &mut [[f64; 8]; 8], table: &[f64; 64], c: &[[f64; 8]; 8]) {
    let mut coef = [[0.0f64; 8]; 8];
    // F = C * f * C^T
    for v in 0..8 {
        for u in 0..8 {
            let mut acc = 0.0;
            for y in 0..8 {
                for x in 0..8 {
                    acc += c[v][y] * block[y][x] * c[u][x];
                }
            }
            coef[v][u] = acc;
        }
    }
    for v in 0..8 {
        for u in 0..8 {
            let q = table[v * 8 + u];
            coef[v][u] = (coef[v][u] / q).round() * q;
        }
    }
    // f = C^T * F * C
    for y in 0..8 {
        for x in 0..8 {
            let mut acc = 0.0;
            for v in 0..8 {
                for u in 0..8 {
                    acc += c[v][y] * coef[v][u] * c[u][x];
                }
            }
            block[y][x] = acc;
        }
    }
}

/// Runs one padded channel (values centered around 0) through blockwise
/// quantization.
fn process_channel(data: &mut [f64], w: usize, h: usize, table: &[f64; 64]) {
    debug_assert!(w.is_multiple_of(8) && h.is_multiple_of(8));
    let c = dct_matrix();
    let blocks_x = w / 8;
    let rows: Vec<(usize, Vec<f64>)> = (0..h / 8)
        .into_par_iter()
        .map(|by| {
            let mut strip = vec![0.0f64; 8 * w];
            for y in 0..8 {
                strip[y * w..(y + 1) * w]
                    .copy_from_slice(&data[(by * 8 + y) * w..(by * 8 + y + 1) * w]);
            }
            for bx in 0..blocks_x {
                let mut block = [[0.0f64; 8]; 8];
                for y in 0..8 {
                    for x in 0..8 {
                        block[y][x] = strip[y * w + bx * 8 + x];
                    }
                }
                quantize_block(&mut block, table, &c);
                for y in 0..8 {
                    for x in 0..8 {
                        strip[y * w + bx * 8 + x] = block[y][x];
                    }
                }
            }
            (by, strip)
        })
        .collect();
    for (by, strip) in rows {
        for y in 0..8 {
            data[(by * 8 + y) * w..(by * 8 + y + 1) * w].copy_from_slice(&strip[y * w..(y + 1) * w]);
        }
    }
}

/// Applies JPEG quantization distortion at the given quality (1..=100).
pub fn jpeg_simulate(img: &SrgbImage, quality: u8) -> Result<SrgbImage> {
    if !(1..=100).contains(&quality) {
        return Err(Error::InvalidArgument(format!(
            "jpeg quality must be in 1..=100, got {quality}"
        )));
    }
    let (w, h) = (img.width(), img.height());
    let pw = w.div_ceil(8) * 8;
    let ph = h.div_ceil(8) * 8;

    // BT.601 full-range RGB -> YCbCr; inverse derived numerically so the
    // round trip is exact up to quantization.
    let (kr, kg, kb) = (0.299f64, 0.587f64, 0.114f64);
    let fwd: [f64; 9] = [
        kr,
        kg,
        kb,
        -kr / (2.0 - 2.0 * kb),
        -kg / (2.0 - 2.0 * kb),
        0.5,
        0.5,
        -kg / (2.0 - 2.0 * kr),
        -kb / (2.0 - 2.0 * kr),
    ];
    let inv = invert3(&fwd).expect("BT.601 matrix is invertible");

    // Pad by edge replication and convert to centered YCbCr in 8-bit scale.
    let mut channels = [
        vec![0.0f64; pw * ph],
        vec![0.0f64; pw * ph],
        vec![0.0f64; pw * ph],
    ];
    for y in 0..ph {
        let sy = y.min(h - 1);
        for x in 0..pw {
            let sx = x.min(w - 1);
            let [r, g, b] = img.pixel(sx, sy).map(|v| v as f64);
            let yy = fwd[0] * r + fwd[1] * g + fwd[2] * b;
            let cb = fwd[3] * r + fwd[4] * g + fwd[5] * b;
            let cr = fwd[6] * r + fwd[7] * g + fwd[8] * b;
            channels[0][y * pw + x] = yy * 255.0 - 128.0;
            channels[1][y * pw + x] = cb * 255.0;
            channels[2][y * pw + x] = cr * 255.0;
        }
    }

    let luma_table = scaled_quant_table(&LUMA_QUANT, quality);
    let chroma_table = scaled_quant_table(&CHROMA_QUANT, quality);
    process_channel(&mut channels[0], pw, ph, &luma_table);
    process_channel(&mut channels[1], pw, ph, &chroma_table);
    process_channel(&mut channels[2], pw, ph, &chroma_table);

    // Back to RGB, cropping the padding away.
    let mut planes = [
        Vec::with_capacity(w * h),
        Vec::with_capacity(w * h),
        Vec::with_capacity(w * h),
    ];
    for y in 0..h {
        for x in 0..w {
            let yy = (channels[0][y * pw + x] + 128.0) / 255.0;
            let cb = channels[1][y * pw + x] / 255.0;
            let cr = channels[2][y * pw + x] / 255.0;
            let r = inv[0] * yy + inv[1] * cb + inv[2] * cr;
            let g = inv[3] * yy + inv[4] * cb + inv[5] * cr;
            let b = inv[6] * yy + inv[7] * cb + inv[8] * cr;
            planes[0].push(r.clamp(0.0, 1.0) as f32);
            planes[1].push(g.clamp(0.0, 1.0) as f32);
            planes[2].push(b.clamp(0.0, 1.0) as f32);
        }
    }
    let [r, g, b] = planes;
    Ok(SrgbImage {
        r: ImagePlane::from_vec(w, h, r).expect("jpeg plane"),
        g: ImagePlane::from_vec(w, h, g).expect("jpeg plane"),
        b: ImagePlane::from_vec(w, h, b).expect("jpeg plane"),
    })
}
