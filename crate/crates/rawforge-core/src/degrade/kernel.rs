//! Blur kernel synthesis: isotropic/anisotropic Gaussians and a radially
//! windowed jinc low-pass ("sinc" kernel).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Blur kernel description. Sizes are odd, 7 to 21.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KernelSpec {
    IsoGaussian {
        size: usize,
        sigma: f64,
    },
    AnisoGaussian {
        size: usize,
        sigma_x: f64,
        sigma_y: f64,
        theta: f64,
    },
    Sinc {
        size: usize,
        /// Radial cutoff frequency in radians/pixel, in `(0, pi]`.
        cutoff: f64,
    },
}

impl KernelSpec {
    pub fn size(&self) -> usize {
        match *self {
            KernelSpec::IsoGaussian { size, .. }
            | KernelSpec::AnisoGaussian { size, .. }
            | KernelSpec::Sinc { size, .. } => size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let size = self.size();
        if size.is_multiple_of(2) || !(7..=21).contains(&size) {
            return Err(Error::InvalidArgument(format!(
                "kernel size must be odd and within 7..=21, got {size}"
            )));
        }
        match *self {
            KernelSpec::IsoGaussian { sigma, .. } => {
                if !sigma.is_finite() || sigma <= 0.0 {
                    return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
                }
            }
            KernelSpec::AnisoGaussian { sigma_x, sigma_y, .. } => {
                if [sigma_x, sigma_y].iter().any(|s| !s.is_finite() || *s <= 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "sigmas must be positive, got ({sigma_x}, {sigma_y})"
                    )));
                }
            }
            KernelSpec::Sinc { cutoff, .. } => {
                if !(cutoff.is_finite() && cutoff > 0.0 && cutoff <= std::f64::consts::PI) {
                    return Err(Error::InvalidArgument(format!(
                        "sinc cutoff must lie in (0, pi], got {cutoff}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Square 2D convolution kernel with taps summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel2D {
    size: usize,
    taps: Vec<f64>,
}

impl Kernel2D {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn radius(&self) -> usize {
        self.size / 2
    }

    #[inline]
    pub fn tap(&self, i: usize, j: usize) -> f64 {
        self.taps[j * self.size + i]
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    /// A normalized delta: identity under convolution.
    pub fn delta() -> Kernel2D {
        let mut taps = vec![0.0; 49];
        taps[3 * 7 + 3] = 1.0;
        Kernel2D { size: 7, taps }
    }
}

/// Evaluates the spec into normalized taps.
pub fn make_kernel(spec: &KernelSpec) -> Result<Kernel2D> {
    spec.validate()?;
    let size = spec.size();
    let r = (size / 2) as f64;
    let mut taps = vec![0.0f64; size * size];
    for j in 0..size {
        for i in 0..size {
            let dx = i as f64 - r;
            let dy = j as f64 - r;
            taps[j * size + i] = match *spec {
                KernelSpec::IsoGaussian { sigma, .. } => {
                    (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
                }
                KernelSpec::AnisoGaussian { sigma_x, sigma_y, theta, .. } => {
                    let u = theta.cos() * dx + theta.sin() * dy;
                    let v = -theta.sin() * dx + theta.cos() * dy;
                    (-(u * u) / (2.0 * sigma_x * sigma_x) - (v * v) / (2.0 * sigma_y * sigma_y)).exp()
                }
                KernelSpec::Sinc { cutoff, .. } => {
                    let rad = (dx * dx + dy * dy).sqrt();
                    // 2D circular low-pass: cutoff * J1(cutoff r) / (2 pi r),
                    // with the r -> 0 limit cutoff^2 / (4 pi).
                    let lp = if rad < 1e-9 {
                        cutoff * cutoff / (4.0 * std::f64::consts::PI)
                    } else {
                        cutoff * libm::j1(cutoff * rad) / (2.0 * std::f64::consts::PI * rad)
                    };
                    // Radial Hann window, zero at and beyond the kernel radius edge.
                    let win = if rad <= r {
                        0.5 * (1.0 + (std::f64::consts::PI * rad / (r + 0.5)).cos())
                    } else {
                        0.0
                    };
                    lp * win
                }
            };
        }
    }
    let sum: f64 = taps.iter().sum();
    if sum.abs() < 1e-12 {
        return Err(Error::InvalidArgument(
            "kernel taps sum to zero; cannot normalize".into(),
        ));
    }
    for t in &mut taps {
        *t /= sum;
    }
    Ok(Kernel2D { size, taps })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_sigma_is_delta() {
        let k = make_kernel(&KernelSpec::IsoGaussian { size: 7, sigma: 1e-3 }).unwrap();
        assert!((k.tap(3, 3) - 1.0).abs() < 1e-12);
        for j in 0..7 {
            for i in 0..7 {
                if (i, j) != (3, 3) {
                    assert!(k.tap(i, j).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn iso_gaussian_symmetric_and_normalized() {
        let k = make_kernel(&KernelSpec::IsoGaussian { size: 7, sigma: 1.0 }).unwrap();
        let sum: f64 = k.taps().iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
        // Symmetric under 90 degree rotation.
        for j in 0..7 {
            for i in 0..7 {
                assert!((k.tap(i, j) - k.tap(6 - j, i)).abs() < 1e-12);
            }
        }
    }

    fn tap_marginal_variances(k: &Kernel2D) -> (f64, f64) {
        let r = k.radius() as f64;
        let mut var_x = 0.0;
        let mut var_y = 0.0;
        for j in 0..k.size() {
            for i in 0..k.size() {
                let w = k.tap(i, j);
                var_x += w * (i as f64 - r).powi(2);
                var_y += w * (j as f64 - r).powi(2);
            }
        }
        (var_x, var_y)
    }

    /// Variance of the 1D integer-sampled Gaussian, the exact expectation
    /// for tap moments (for sigma below ~1 it sits well above sigma^2).
    fn discrete_gaussian_variance(sigma: f64, radius: i64) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for k in -radius..=radius {
            let w = (-(k * k) as f64 / (2.0 * sigma * sigma)).exp();
            num += w * (k * k) as f64;
            den += w;
        }
        num / den
    }

    #[test]
    fn aniso_marginal_variance_ratio() {
        // With sigmas large enough for the integer sampling to resolve them,
        // the tap-moment ratio approaches (sigma_x / sigma_y)^2.
        let k = make_kernel(&KernelSpec::AnisoGaussian {
            size: 21,
            sigma_x: 2.0,
            sigma_y: 1.0,
            theta: 0.0,
        })
        .unwrap();
        let (var_x, var_y) = tap_marginal_variances(&k);
        assert!(var_x > var_y);
        let ratio = var_x / var_y;
        let expect = (2.0f64 / 1.0).powi(2);
        assert!((ratio - expect).abs() / expect < 0.10, "ratio {ratio}");
    }

    #[test]
    fn aniso_matches_discrete_gaussian_moments() {
        // At sigma 0.5 integer sampling inflates the marginal variance; the
        // honest expectation comes from the 1D discrete Gaussian.
        let k = make_kernel(&KernelSpec::AnisoGaussian {
            size: 21,
            sigma_x: 2.0,
            sigma_y: 0.5,
            theta: 0.0,
        })
        .unwrap();
        let (var_x, var_y) = tap_marginal_variances(&k);
        assert!(var_x > var_y);
        let expect_x = discrete_gaussian_variance(2.0, 10);
        let expect_y = discrete_gaussian_variance(0.5, 10);
        let ratio = var_x / var_y;
        let expect = expect_x / expect_y;
        assert!((ratio - expect).abs() / expect < 0.01, "{ratio} vs {expect}");
    }

    #[test]
    fn sinc_normalized() {
        for cutoff in [0.8, 1.5, std::f64::consts::PI] {
            let k = make_kernel(&KernelSpec::Sinc { size: 15, cutoff }).unwrap();
            let sum: f64 = k.taps().iter().sum();
            assert!((sum - 1.0).abs() < 1e-6, "cutoff {cutoff} sum {sum}");
        }
    }

    #[test]
    fn bad_specs_rejected() {
        assert!(make_kernel(&KernelSpec::IsoGaussian { size: 8, sigma: 1.0 }).is_err());
        assert!(make_kernel(&KernelSpec::IsoGaussian { size: 5, sigma: 1.0 }).is_err());
        assert!(make_kernel(&KernelSpec::IsoGaussian { size: 7, sigma: 0.0 }).is_err());
        assert!(make_kernel(&KernelSpec::Sinc { size: 7, cutoff: 0.0 }).is_err());
    }

    #[test]
    fn spec_json_roundtrip() {
        let spec = KernelSpec::AnisoGaussian {
            size: 9,
            sigma_x: 1.5,
            sigma_y: 0.7,
            theta: 0.3,
        };
        let json = serde_json::to_string(&spec).unwrap();
        assert!(json.contains("aniso_gaussian"));
        let back: KernelSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
    }
}
