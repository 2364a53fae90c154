//! Core image value types and lossless file IO.
//!
//! All pixel data is stored as planar row-major `f32` in nominal `[0, 1]`.
//! Images are immutable values after construction: operations return new
//! images and never mutate their inputs, so everything here is safe to share
//! across threads.

mod io;

pub use io::{
    decode_rfim, encode_rfim, load_image, load_linear, load_plane, load_raw, load_srgb,
    save_linear, save_plane_png, save_raw, save_rfim, save_srgb, sidecar_path, write_atomic,
    BitDepth, DomainHint, LoadedImage, RFIM_MAGIC,
};

use crate::cfa::BayerPattern;
use crate::error::{Error, Result};
use crate::noise::NoiseParams;
use serde::{Deserialize, Serialize};

/// Single-channel row-major f32 raster.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePlane {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl ImagePlane {
    /// Builds a plane from row-major samples, validating shape and finiteness.
    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "plane dimensions must be >= 1, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "plane data length {} != {width}x{height}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "plane contains non-finite samples".into(),
            ));
        }
        Ok(Self { width, height, data })
    }

    /// Constant-valued plane.
    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    /// Builds a plane by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        debug_assert!(x < self.width && y < self.height);
        self.data[y * self.width + x]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Same dimensions as `other`?
    pub fn same_size(&self, other: &ImagePlane) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Copies the `w x h` region at `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<ImagePlane> {
        if x0 + w > self.width || y0 + h > self.height || w == 0 || h == 0 {
            return Err(Error::InvalidArgument(format!(
                "crop region {w}x{h}+{x0}+{y0} out of bounds for {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            let row = &self.data[y * self.width + x0..y * self.width + x0 + w];
            data.extend_from_slice(row);
        }
        Ok(ImagePlane {
            width: w,
            height: h,
            data,
        })
    }
}

/// 3-channel scene-linear image; samples are proportional to radiance.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearImage {
    pub r: ImagePlane,
    pub g: ImagePlane,
    pub b: ImagePlane,
}

/// 3-channel display-referred image (tone-mapped, gamma-encoded).
#[derive(Debug, Clone, PartialEq)]
pub struct SrgbImage {
    pub r: ImagePlane,
    pub g: ImagePlane,
    pub b: ImagePlane,
}

macro_rules! impl_rgb_image {
    ($ty:ident) => {
        impl $ty {
            pub fn new(r: ImagePlane, g: ImagePlane, b: ImagePlane) -> Result<Self> {
                if !r.same_size(&g) || !r.same_size(&b) {
                    return Err(Error::DimensionMismatch(
                        "channel planes differ in size".into(),
                    ));
                }
                Ok(Self { r, g, b })
            }

            pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
                Self {
                    r: ImagePlane::filled(width, height, rgb[0]),
                    g: ImagePlane::filled(width, height, rgb[1]),
                    b: ImagePlane::filled(width, height, rgb[2]),
                }
            }

            pub fn width(&self) -> usize {
                self.r.width()
            }

            pub fn height(&self) -> usize {
                self.r.height()
            }

            /// Pixel as `[r, g, b]`.
            #[inline]
            pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
                [self.r.get(x, y), self.g.get(x, y), self.b.get(x, y)]
            }

            pub fn planes(&self) -> [&ImagePlane; 3] {
                [&self.r, &self.g, &self.b]
            }

            pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
                Ok(Self {
                    r: self.r.crop(x0, y0, w, h)?,
                    g: self.g.crop(x0, y0, w, h)?,
                    b: self.b.crop(x0, y0, w, h)?,
                })
            }
        }
    };
}

impl_rgb_image!(LinearImage);
impl_rgb_image!(SrgbImage);

/// Unconstrained 3-channel raster used for derivatives and gradients.
///
/// Unlike [`LinearImage`] / [`SrgbImage`] there is no nominal `[0, 1]` range:
/// tangents and gradients are signed and unbounded.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentImage {
    pub r: ImagePlane,
    pub g: ImagePlane,
    pub b: ImagePlane,
}

impl TangentImage {
    pub fn new(r: ImagePlane, g: ImagePlane, b: ImagePlane) -> Result<Self> {
        if !r.same_size(&g) || !r.same_size(&b) {
            return Err(Error::DimensionMismatch(
                "tangent planes differ in size".into(),
            ));
        }
        Ok(Self { r, g, b })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            r: ImagePlane::filled(width, height, 0.0),
            g: ImagePlane::filled(width, height, 0.0),
            b: ImagePlane::filled(width, height, 0.0),
        }
    }

    pub fn width(&self) -> usize {
        self.r.width()
    }

    pub fn height(&self) -> usize {
        self.r.height()
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        [self.r.get(x, y), self.g.get(x, y), self.b.get(x, y)]
    }
}

/// Capture-time processing state attached to every RAW frame.
///
/// Serialized verbatim as the `<stem>.meta.json` sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureMetadata {
    pub pattern: BayerPattern,
    /// White-balance gains `(g_r, g_g, g_b)`, all positive.
    pub wb_gains: [f64; 3],
    /// Row-major 3x3 color correction matrix; rows sum to 1.
    pub ccm: [f64; 9],
    /// Signal-proportional noise variance coefficient.
    pub shot: f64,
    /// Signal-independent noise variance.
    pub read: f64,
    pub seed: u64,
    /// Transfer curve applied after the CCM; sRGB piecewise curve by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<crate::ptp::GammaCurve>,
    /// Tone curve applied last; smoothstep by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tone: Option<crate::ptp::ToneCurve>,
    /// Marks a debug frame holding pre-clamp noise (samples may leave [0,1]).
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub pre_clip: bool,
}

impl CaptureMetadata {
    /// Neutral metadata: unit gains, identity CCM, zero noise.
    pub fn neutral(pattern: BayerPattern) -> Self {
        Self {
            pattern,
            wb_gains: [1.0, 1.0, 1.0],
            ccm: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            shot: 0.0,
            read: 0.0,
            seed: 0,
            gamma: None,
            tone: None,
            pre_clip: false,
        }
    }

    pub fn noise(&self) -> NoiseParams {
        NoiseParams {
            shot: self.shot,
            read: self.read,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.wb_gains.iter().any(|&g| !g.is_finite() || g <= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "wb gains must be positive and finite, got {:?}",
                self.wb_gains
            )));
        }
        if det3(&self.ccm).abs() <= 1e-8 {
            return Err(Error::SingularCcm);
        }
        if self.shot < 0.0 || self.read < 0.0 {
            return Err(Error::InvalidArgument(
                "noise coefficients must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Determinant of a row-major 3x3 matrix.
pub(crate) fn det3(m: &[f64; 9]) -> f64 {
    m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6])
        + m[2] * (m[3] * m[7] - m[4] * m[6])
}

/// Single-channel mosaiced sensor frame plus its capture metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct RawImage {
    pub plane: ImagePlane,
    pub meta: CaptureMetadata,
}

impl RawImage {
    /// Wraps a plane, enforcing even dimensions (full Bayer quads).
    pub fn new(plane: ImagePlane, meta: CaptureMetadata) -> Result<Self> {
        if !plane.width().is_multiple_of(2) || !plane.height().is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "raw dimensions must be even, got {}x{}",
                plane.width(),
                plane.height()
            )));
        }
        Ok(Self { plane, meta })
    }

    pub fn width(&self) -> usize {
        self.plane.width()
    }

    pub fn height(&self) -> usize {
        self.plane.height()
    }

    pub fn pattern(&self) -> BayerPattern {
        self.meta.pattern
    }

    /// Crops a region; offsets must be even to preserve the Bayer phase, and
    /// the size must be even to keep full quads.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if !x0.is_multiple_of(2) || !y0.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "raw crop offset ({x0}, {y0}) must be even to preserve the Bayer phase"
            )));
        }
        if !w.is_multiple_of(2) || !h.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "raw crop size {w}x{h} must be even"
            )));
        }
        Ok(Self {
            plane: self.plane.crop(x0, y0, w, h)?,
            meta: self.meta.clone(),
        })
    }
}
