//! Direct 2D convolution with edge-replicate padding.

use rayon::prelude::*;

use super::kernel::Kernel2D;
use crate::error::{Error, Result};
use crate::image::ImagePlane;

/// Convolves a plane with a kernel; same-size output, edges replicated.
/// Accumulation runs in f64 and the result is clamped to `[0, 1]` (sinc
/// kernels have negative lobes).
pub fn convolve_plane(plane: &ImagePlane, kernel: &Kernel2D) -> Result<ImagePlane> {
    let (w, h) = (plane.width(), plane.height());
    if kernel.size() > w || kernel.size() > h {
        return Err(Error::InvalidArgument(format!(
            "kernel size {} exceeds image {w}x{h}",
            kernel.size()
        )));
    }
    let r = kernel.radius() as isize;
    let rows: Vec<Vec<f32>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut row = Vec::with_capacity(w);
            for x in 0..w {
                let mut acc = 0.0f64;
                for j in -r..=r {
                    let sy = (y as isize + j).clamp(0, h as isize - 1) as usize;
                    for i in -r..=r {
                        let sx = (x as isize + i).clamp(0, w as isize - 1) as usize;
                        acc += kernel.tap((i + r) as usize, (j + r) as usize)
                            * plane.get(sx, sy) as f64;
                    }
                }
                row.push(acc.clamp(0.0, 1.0) as f32);
            }
            row
        })
        .collect();
    let mut data = Vec::with_capacity(w * h);
    for row in rows {
        data.extend(row);
    }
    Ok(ImagePlane::from_vec(w, h, data).expect("convolved plane"))
}
