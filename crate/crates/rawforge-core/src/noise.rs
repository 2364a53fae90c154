//! Heteroscedastic sensor noise: shot + read Gaussian injection and
//! parameter sampling.
//!
//! The variance at a pixel of clean intensity `x` is `read + shot * x`.
//! Noise values are a pure function of `(seed, pixel index)`, so fields are
//! bit-identical across runs and thread counts.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{CaptureMetadata, ImagePlane, RawImage};
use crate::rng::{normal_at, DetRng};

/// Shot/read variance coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    /// Signal-proportional variance coefficient.
    pub shot: f64,
    /// Signal-independent variance.
    pub read: f64,
}

impl NoiseParams {
    pub const ZERO: NoiseParams = NoiseParams { shot: 0.0, read: 0.0 };

    pub fn validate(&self) -> Result<()> {
        if !self.shot.is_finite() || !self.read.is_finite() || self.shot < 0.0 || self.read < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "noise params must be finite and non-negative, got shot={} read={}",
                self.shot, self.read
            )));
        }
        Ok(())
    }
}

/// Sampling distribution for [`NoiseParams`].
///
/// `ln(shot)` is uniform over `shot_log_range`; `ln(read)` follows the
/// log-linear model `slope * ln(shot) + intercept + N(0, sigma)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseRanges {
    /// `[ln(shot_min), ln(shot_max)]`.
    pub shot_log_range: [f64; 2],
    pub read_slope: f64,
    pub read_intercept: f64,
    pub read_sigma: f64,
}

impl Default for NoiseRanges {
    fn default() -> Self {
        Self {
            shot_log_range: [1e-4f64.ln(), 1e-2f64.ln()],
            read_slope: 2.18,
            read_intercept: 1.20,
            read_sigma: 0.26,
        }
    }
}

impl NoiseRanges {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.shot_log_range;
        if !lo.is_finite() || !hi.is_finite() || lo > hi {
            return Err(Error::InvalidArgument(format!(
                "shot log range [{lo}, {hi}] is not an ordered finite interval"
            )));
        }
        if !self.read_sigma.is_finite() || self.read_sigma < 0.0 {
            return Err(Error::InvalidArgument(
                "read_sigma must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Draws noise parameters from `ranges`.
pub fn sample_noise_params(rng: &mut DetRng, ranges: &NoiseRanges) -> Result<NoiseParams> {
    ranges.validate()?;
    let log_shot = rng.uniform(ranges.shot_log_range[0], ranges.shot_log_range[1]);
    let log_read = ranges.read_slope * log_shot + ranges.read_intercept
        + ranges.read_sigma * rng.normal();
    Ok(NoiseParams {
        shot: log_shot.exp(),
        read: log_read.exp(),
    })
}

fn noisy_plane(plane: &ImagePlane, p: NoiseParams, seed: u64, clamp: bool) -> ImagePlane {
    let (w, h) = (plane.width(), plane.height());
    let rows: Vec<Vec<f32>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut row = Vec::with_capacity(w);
            for x in 0..w {
                let clean = plane.get(x, y) as f64;
                let sigma = (p.read + p.shot * clean.max(0.0)).sqrt();
                let idx = (y * w + x) as u64;
                let noisy = clean + sigma * normal_at(seed, idx);
                row.push(if clamp { noisy.clamp(0.0, 1.0) as f32 } else { noisy as f32 });
            }
            row
        })
        .collect();
    let mut data = Vec::with_capacity(w * h);
    for row in rows {
        data.extend(row);
    }
    ImagePlane::from_vec(w, h, data).expect("noise plane")
}

fn with_noise_meta(raw: &RawImage, p: NoiseParams, seed: u64, pre_clip: bool) -> CaptureMetadata {
    let mut meta = raw.meta.clone();
    meta.shot = p.shot;
    meta.read = p.read;
    meta.seed = seed;
    meta.pre_clip = pre_clip;
    meta
}

/// Adds per-pixel Gaussian noise of variance `read + shot * x`, clamped to
/// `[0, 1]`. Bit-deterministic given `seed`.
pub fn add_shot_read_noise(raw: &RawImage, p: NoiseParams, seed: u64) -> Result<RawImage> {
    p.validate()?;
    Ok(RawImage {
        plane: noisy_plane(&raw.plane, p, seed, true),
        meta: with_noise_meta(raw, p, seed, false),
    })
}

/// Debug variant of [`add_shot_read_noise`] that skips the final clamp; the
/// result is marked `pre_clip` and may hold samples outside `[0, 1]`.
pub fn add_shot_read_noise_preclamp(raw: &RawImage, p: NoiseParams, seed: u64) -> Result<RawImage> {
    p.validate()?;
    Ok(RawImage {
        plane: noisy_plane(&raw.plane, p, seed, false),
        meta: with_noise_meta(raw, p, seed, true),
    })
}

const ESTIMATE_BINS: usize = 16;

/// Recovers `(shot, read)` from a noisy/clean pair by fitting per-bin
/// residual variance against clean intensity over 16 intensity bins.
///
/// Errors if any bin holds fewer than 100 samples.
pub fn estimate_noise_curve(raw: &RawImage, gt: &RawImage) -> Result<(f64, f64)> {
    if raw.width() != gt.width() || raw.height() != gt.height() {
        return Err(Error::DimensionMismatch(
            "noisy and clean frames differ in size".into(),
        ));
    }
    if raw.pattern() != gt.pattern() {
        return Err(Error::InvalidArgument(
            "noisy and clean frames carry different Bayer patterns".into(),
        ));
    }
    let clean = gt.plane.data();
    let noisy = raw.plane.data();
    let (lo, hi) = clean.iter().fold((f64::MAX, f64::MIN), |(lo, hi), &v| {
        (lo.min(v as f64), hi.max(v as f64))
    });
    let span = (hi - lo).max(1e-12);

    let mut count = [0usize; ESTIMATE_BINS];
    let mut sum_x = [0.0f64; ESTIMATE_BINS];
    let mut sum_r = [0.0f64; ESTIMATE_BINS];
    let mut sum_r2 = [0.0f64; ESTIMATE_BINS];
    for (&n, &c) in noisy.iter().zip(clean) {
        let x = c as f64;
        let bin = (((x - lo) / span) * ESTIMATE_BINS as f64).min(ESTIMATE_BINS as f64 - 1.0) as usize;
        let r = n as f64 - x;
        count[bin] += 1;
        sum_x[bin] += x;
        sum_r[bin] += r;
        sum_r2[bin] += r * r;
    }
    if let Some(bin) = count.iter().position(|&c| c < 100) {
        return Err(Error::InsufficientSamples { bin, count: count[bin] });
    }

    // Least squares of per-bin variance against per-bin mean intensity.
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for b in 0..ESTIMATE_BINS {
        let n = count[b] as f64;
        let x = sum_x[b] / n;
        let mean_r = sum_r[b] / n;
        let var = sum_r2[b] / n - mean_r * mean_r;
        sx += x;
        sy += var;
        sxx += x * x;
        sxy += x * var;
    }
    let n = ESTIMATE_BINS as f64;
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-18 {
        return Err(Error::InvalidArgument(
            "clean frame has no intensity spread to fit against".into(),
        ));
    }
    let shot = (n * sxy - sx * sy) / denom;
    let read = (sy - shot * sx) / n;
    Ok((shot, read))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cfa::BayerPattern;
    use crate::image::CaptureMetadata;

    fn plate(w: usize, h: usize, v: f32) -> RawImage {
        RawImage::new(
            ImagePlane::filled(w, h, v),
            CaptureMetadata::neutral(BayerPattern::Rggb),
        )
        .unwrap()
    }

    fn ramp(w: usize, h: usize) -> RawImage {
        RawImage::new(
            ImagePlane::from_fn(w, h, |x, _| x as f32 / (w - 1) as f32),
            CaptureMetadata::neutral(BayerPattern::Rggb),
        )
        .unwrap()
    }

    fn plane_variance(p: &ImagePlane) -> f64 {
        let n = p.data().len() as f64;
        let mean = p.data().iter().map(|&v| v as f64).sum::<f64>() / n;
        p.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n
    }

    #[test]
    fn degenerate_range_collapses() {
        let a = 3.7e-3f64;
        let ranges = NoiseRanges {
            shot_log_range: [a.ln(), a.ln()],
            read_sigma: 0.0,
            ..NoiseRanges::default()
        };
        let mut rng = DetRng::new(0);
        let p = sample_noise_params(&mut rng, &ranges).unwrap();
        assert!((p.shot - a).abs() / a < 1e-15);
    }

    #[test]
    fn unit_line_links_read_to_shot() {
        let ranges = NoiseRanges {
            shot_log_range: [1e-4f64.ln(), 1e-2f64.ln()],
            read_slope: 1.0,
            read_intercept: 0.0,
            read_sigma: 0.0,
        };
        let mut rng = DetRng::new(4);
        for _ in 0..50 {
            let p = sample_noise_params(&mut rng, &ranges).unwrap();
            assert!((p.read / p.shot - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn log_shot_is_uniform_ks() {
        // Kolmogorov-Smirnov statistic of ln(shot) against the uniform CDF.
        let ranges = NoiseRanges::default();
        let [lo, hi] = ranges.shot_log_range;
        let mut rng = DetRng::new(8);
        let n = 100_000;
        let mut xs: Vec<f64> = (0..n)
            .map(|_| {
                let p = sample_noise_params(&mut rng, &ranges).unwrap();
                (p.shot.ln() - lo) / (hi - lo)
            })
            .collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut d = 0.0f64;
        for (i, &u) in xs.iter().enumerate() {
            d = d.max((u - i as f64 / n as f64).abs());
            d = d.max(((i + 1) as f64 / n as f64 - u).abs());
        }
        assert!(d < 0.01, "KS statistic {d}");
    }

    #[test]
    fn invalid_ranges_rejected() {
        let bad = NoiseRanges {
            shot_log_range: [0.0, -1.0],
            ..NoiseRanges::default()
        };
        let mut rng = DetRng::new(0);
        assert!(sample_noise_params(&mut rng, &bad).is_err());
    }

    #[test]
    fn zero_variance_is_identity() {
        let raw = ramp(64, 64);
        let out = add_shot_read_noise(&raw, NoiseParams::ZERO, 123).unwrap();
        assert_eq!(out.plane, raw.plane);
    }

    #[test]
    fn negative_params_rejected() {
        let raw = plate(4, 4, 0.5);
        let p = NoiseParams { shot: -0.1, read: 0.0 };
        assert!(add_shot_read_noise(&raw, p, 0).is_err());
    }

    #[test]
    fn variance_law_on_half_plate() {
        // Pre-clamp variance at x = 0.5 is read + shot/2 = 0.006.
        let raw = plate(1000, 1000, 0.5);
        let p = NoiseParams { shot: 0.01, read: 0.001 };
        let noisy = add_shot_read_noise_preclamp(&raw, p, 99).unwrap();
        assert!(noisy.meta.pre_clip);
        let var = plane_variance(&noisy.plane);
        assert!((var - 0.006).abs() / 0.006 < 0.05, "variance {var}");
    }

    #[test]
    fn variance_law_at_black() {
        let raw = plate(1000, 1000, 0.0);
        let p = NoiseParams { shot: 0.01, read: 0.001 };
        let noisy = add_shot_read_noise_preclamp(&raw, p, 7).unwrap();
        let var = plane_variance(&noisy.plane);
        assert!((var - 0.001).abs() / 0.001 < 0.05, "variance {var}");
    }

    #[test]
    fn mean_preserved_preclamp() {
        let raw = plate(1000, 1000, 0.5);
        let p = NoiseParams { shot: 0.01, read: 0.001 };
        let noisy = add_shot_read_noise_preclamp(&raw, p, 21).unwrap();
        let n = 1_000_000f64;
        let mean_shift = noisy.plane.data().iter().map(|&v| v as f64 - 0.5).sum::<f64>() / n;
        let sigma = 0.006f64.sqrt();
        assert!(mean_shift.abs() < 3.0 * sigma / n.sqrt(), "shift {mean_shift}");
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let raw = ramp(128, 128);
        let p = NoiseParams { shot: 0.005, read: 0.0005 };
        let a = add_shot_read_noise(&raw, p, 42).unwrap();
        let b = add_shot_read_noise(&raw, p, 42).unwrap();
        assert_eq!(a.plane, b.plane);
        let c = add_shot_read_noise(&raw, p, 43).unwrap();
        assert_ne!(a.plane, c.plane);
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let raw = ramp(128, 128);
        let p = NoiseParams { shot: 0.005, read: 0.0005 };
        let pool1 = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let pool8 = rayon::ThreadPoolBuilder::new().num_threads(8).build().unwrap();
        let a = pool1.install(|| add_shot_read_noise(&raw, p, 5).unwrap());
        let b = pool8.install(|| add_shot_read_noise(&raw, p, 5).unwrap());
        assert_eq!(a.plane, b.plane);
    }

    #[test]
    fn adjacent_seeds_uncorrelated() {
        let n = 1_000_000u64;
        let mut sum_a = 0.0;
        let mut sum_b = 0.0;
        let mut sum_ab = 0.0;
        let mut sum_a2 = 0.0;
        let mut sum_b2 = 0.0;
        for i in 0..n {
            let a = normal_at(1000, i);
            let b = normal_at(1001, i);
            sum_a += a;
            sum_b += b;
            sum_ab += a * b;
            sum_a2 += a * a;
            sum_b2 += b * b;
        }
        let nf = n as f64;
        let cov = sum_ab / nf - (sum_a / nf) * (sum_b / nf);
        let var_a = sum_a2 / nf - (sum_a / nf).powi(2);
        let var_b = sum_b2 / nf - (sum_b / nf).powi(2);
        let rho = cov / (var_a * var_b).sqrt();
        assert!(rho.abs() < 0.01, "correlation {rho}");
    }

    #[test]
    fn estimate_recovers_injected_params() {
        let gt = ramp(512, 512);
        let truth = NoiseParams { shot: 0.01, read: 0.001 };
        let noisy = add_shot_read_noise_preclamp(&gt, truth, 2024).unwrap();
        let (shot, read) = estimate_noise_curve(&noisy, &gt).unwrap();
        assert!((shot - truth.shot).abs() / truth.shot < 0.10, "shot {shot}");
        assert!((read - truth.read).abs() / truth.read < 0.10, "read {read}");
    }

    #[test]
    fn estimate_zero_noise_is_zero() {
        let gt = ramp(512, 512);
        let (shot, read) = estimate_noise_curve(&gt, &gt).unwrap();
        assert!(shot.abs() < 1e-6 && read.abs() < 1e-6);
    }

    #[test]
    fn doubling_read_doubles_intercept() {
        let gt = ramp(512, 512);
        let p1 = NoiseParams { shot: 0.01, read: 0.001 };
        let p2 = NoiseParams { shot: 0.01, read: 0.002 };
        let (_, r1) = estimate_noise_curve(&add_shot_read_noise_preclamp(&gt, p1, 31).unwrap(), &gt).unwrap();
        let (_, r2) = estimate_noise_curve(&add_shot_read_noise_preclamp(&gt, p2, 32).unwrap(), &gt).unwrap();
        assert!((r2 / r1 - 2.0).abs() < 2.0 * 0.15, "ratio {}", r2 / r1);
    }

    #[test]
    fn estimate_rejects_thin_bins() {
        // 8x8 plate: 64 samples land in one bin, every other bin is empty.
        let gt = plate(8, 8, 0.5);
        let noisy = plate(8, 8, 0.5);
        assert!(matches!(
            estimate_noise_curve(&noisy, &gt),
            Err(Error::InsufficientSamples { .. })
        ));
    }
}
