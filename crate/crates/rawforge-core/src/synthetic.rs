//! Deterministic synthetic test images.
//!
//! Band-limited random fields (sums of low-frequency sinusoids) stand in for
//! natural content in self-tests and quality measurements: smooth enough for
//! demosaicing to succeed, structured enough for degradations to measurably
//! hurt.

use crate::image::{ImagePlane, LinearImage, SrgbImage};
use crate::rng::DetRng;

const COMPONENTS: usize = 6;
/// Maximum spatial frequency in cycles/pixel, well below Nyquist.
const MAX_FREQ: f64 = 0.08;

/// Band-limited random plane with samples in `[lo, hi]`.
pub fn band_limited_plane(width: usize, height: usize, seed: u64, lo: f32, hi: f32) -> ImagePlane {
    let mut rng = DetRng::new(seed);
    let mut comps = Vec::with_capacity(COMPONENTS);
    let mut amp_sum = 0.0f64;
    for k in 0..COMPONENTS {
        let amp = 1.0 / (k + 1) as f64;
        let u = rng.uniform(-MAX_FREQ, MAX_FREQ);
        let v = rng.uniform(-MAX_FREQ, MAX_FREQ);
        let phase = rng.uniform(0.0, std::f64::consts::TAU);
        comps.push((amp, u, v, phase));
        amp_sum += amp;
    }
    let (lo, hi) = (lo as f64, hi as f64);
    ImagePlane::from_fn(width, height, |x, y| {
        let mut s = 0.0;
        for &(amp, u, v, phase) in &comps {
            s += amp * (std::f64::consts::TAU * (u * x as f64 + v * y as f64) + phase).sin();
        }
        let unit = 0.5 + 0.5 * s / amp_sum;
        (lo + (hi - lo) * unit) as f32
    })
}

/// Band-limited 3-channel image tagged as scene-linear.
///
/// Channels share most of their structure (a common luminance field plus a
/// milder per-channel deviation), matching the cross-channel correlation of
/// natural photographs that gradient-corrected demosaicing relies on.
pub fn band_limited_image(width: usize, height: usize, seed: u64, lo: f32, hi: f32) -> LinearImage {
    let root = DetRng::new(seed);
    let luma = band_limited_plane(width, height, root.derive(0), 0.0, 1.0);
    let mix = |chroma_seed: u64| {
        let chroma = band_limited_plane(width, height, root.derive(chroma_seed), 0.0, 1.0);
        ImagePlane::from_fn(width, height, |x, y| {
            let unit = 0.75 * luma.get(x, y) + 0.25 * chroma.get(x, y);
            lo + (hi - lo) * unit
        })
    };
    LinearImage {
        r: mix(1),
        g: mix(2),
        b: mix(3),
    }
}

/// Band-limited 3-channel image tagged as display-referred.
pub fn band_limited_srgb(width: usize, height: usize, seed: u64, lo: f32, hi: f32) -> SrgbImage {
    let img = band_limited_image(width, height, seed, lo, hi);
    SrgbImage {
        r: img.r,
        g: img.g,
        b: img.b,
    }
}
