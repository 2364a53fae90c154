//! Post tone processing: the forward chain white balance -> color correction
//! -> gamma compression -> tone mapping, its stage-wise inverse, and exact
//! forward-mode derivatives.
//!
//! Per-pixel math runs in f64 and rounds once on output, so the inverse
//! recovers unclipped forward outputs to well under 1e-4. Derivatives are
//! carried as value/tangent pairs ([`PixelJet`]); clamps propagate a zero
//! tangent and flag the pixel in a saturation mask.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{det3, ImagePlane, LinearImage, SrgbImage, TangentImage};

/// Threshold above which inverse white balance applies the highlight
/// soft-roll for gains above one.
pub const SOFTROLL_THRESHOLD: f64 = 0.9;

/// Transfer curve used by the gamma stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaCurve {
    /// IEC 61966-2-1 piecewise curve (linear toe + 2.4 power segment).
    SrgbStandard,
    /// Pure power curve `y = x^(1/gamma)`.
    Power(f64),
}

/// Tone curve applied after gamma compression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToneCurve {
    /// `s(x) = 3x^2 - 2x^3`, inverted in closed form.
    Smoothstep,
    Identity,
}

/// Parameters of the forward/inverse tone processing chain.
#[derive(Debug, Clone, PartialEq)]
pub struct PtpParams {
    wb_gains: [f64; 3],
    ccm: [f64; 9],
    inv_ccm: [f64; 9],
    gamma: GammaCurve,
    tone: ToneCurve,
}

impl PtpParams {
    /// Validates gains, row sums, and invertibility, and caches the CCM inverse.
    pub fn new(wb_gains: [f64; 3], ccm: [f64; 9], gamma: GammaCurve, tone: ToneCurve) -> Result<Self> {
        if wb_gains.iter().any(|&g| !g.is_finite() || g <= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "wb gains must be positive, got {wb_gains:?}"
            )));
        }
        for row in 0..3 {
            let s: f64 = ccm[3 * row..3 * row + 3].iter().sum();
            if (s - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidArgument(format!(
                    "ccm row {row} sums to {s}, expected 1"
                )));
            }
        }
        if let GammaCurve::Power(g) = gamma {
            if !g.is_finite() || g <= 0.0 {
                return Err(Error::InvalidArgument(format!("gamma exponent must be positive, got {g}")));
            }
        }
        let inv_ccm = invert3(&ccm)?;
        Ok(Self {
            wb_gains,
            ccm,
            inv_ccm,
            gamma,
            tone,
        })
    }

    /// Unit gains, identity CCM, unit power curve, identity tone.
    pub fn identity() -> Self {
        Self::new(
            [1.0; 3],
            [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            GammaCurve::Power(1.0),
            ToneCurve::Identity,
        )
        .expect("identity params are valid")
    }

    pub fn wb_gains(&self) -> [f64; 3] {
        self.wb_gains
    }

    pub fn ccm(&self) -> [f64; 9] {
        self.ccm
    }

    pub fn inv_ccm(&self) -> [f64; 9] {
        self.inv_ccm
    }

    pub fn gamma(&self) -> GammaCurve {
        self.gamma
    }

    pub fn tone(&self) -> ToneCurve {
        self.tone
    }
}

/// Value plus directional derivative for one pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelJet {
    pub value: [f64; 3],
    pub tangent: [f64; 3],
}

/// Per-pixel boolean mask of saturated / clamped pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct SaturationMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl SaturationMask {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    /// Fraction of flagged pixels.
    pub fn fraction(&self) -> f64 {
        self.data.iter().filter(|&&b| b).count() as f64 / self.data.len() as f64
    }
}

/// Inverse of a row-major 3x3 matrix.
pub fn invert3(m: &[f64; 9]) -> Result<[f64; 9]> {
    let det = det3(m);
    if det.abs() <= 1e-8 {
        return Err(Error::SingularCcm);
    }
    let inv_det = 1.0 / det;
    Ok([
        (m[4] * m[8] - m[5] * m[7]) * inv_det,
        (m[2] * m[7] - m[1] * m[8]) * inv_det,
        (m[1] * m[5] - m[2] * m[4]) * inv_det,
        (m[5] * m[6] - m[3] * m[8]) * inv_det,
        (m[0] * m[8] - m[2] * m[6]) * inv_det,
        (m[2] * m[3] - m[0] * m[5]) * inv_det,
        (m[3] * m[7] - m[4] * m[6]) * inv_det,
        (m[1] * m[6] - m[0] * m[7]) * inv_det,
        (m[0] * m[4] - m[1] * m[3]) * inv_det,
    ])
}

#[inline]
fn mat_vec(m: &[f64; 9], v: [f64; 3]) -> [f64; 3] {
    [
        m[0] * v[0] + m[1] * v[1] + m[2] * v[2],
        m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
        m[6] * v[0] + m[7] * v[1] + m[8] * v[2],
    ]
}

// ---------------------------------------------------------------------------
// scalar curves
// ---------------------------------------------------------------------------

const SRGB_LINEAR_CUTOFF: f64 = 0.003_130_8;
const SRGB_ENCODED_CUTOFF: f64 = 0.040_45;

/// Gamma compression `x -> y` on `[0, 1]`.
pub fn gamma_compress(curve: GammaCurve, x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    match curve {
        GammaCurve::SrgbStandard => {
            if x <= SRGB_LINEAR_CUTOFF {
                12.92 * x
            } else {
                1.055 * x.powf(1.0 / 2.4) - 0.055
            }
        }
        GammaCurve::Power(g) => x.powf(1.0 / g),
    }
}

/// Exact inverse of [`gamma_compress`].
pub fn gamma_expand(curve: GammaCurve, y: f64) -> f64 {
    let y = y.clamp(0.0, 1.0);
    match curve {
        GammaCurve::SrgbStandard => {
            if y <= SRGB_ENCODED_CUTOFF {
                y / 12.92
            } else {
                ((y + 0.055) / 1.055).powf(2.4)
            }
        }
        GammaCurve::Power(g) => y.powf(g),
    }
}

/// Derivative of [`gamma_compress`]; zero at the lower boundary where the
/// power curve is not differentiable (clamp subgradient convention).
pub fn gamma_derivative(curve: GammaCurve, x: f64) -> f64 {
    match curve {
        GammaCurve::SrgbStandard => {
            if x <= SRGB_LINEAR_CUTOFF {
                12.92
            } else {
                (1.055 / 2.4) * x.powf(1.0 / 2.4 - 1.0)
            }
        }
        GammaCurve::Power(g) => {
            if x <= 0.0 {
                0.0
            } else {
                (1.0 / g) * x.powf(1.0 / g - 1.0)
            }
        }
    }
}

/// Tone mapping `x -> y` on `[0, 1]`.
pub fn tone_map(curve: ToneCurve, x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    match curve {
        ToneCurve::Smoothstep => x * x * (3.0 - 2.0 * x),
        ToneCurve::Identity => x,
    }
}

/// Closed-form inverse of [`tone_map`].
pub fn tone_unmap(curve: ToneCurve, y: f64) -> f64 {
    let y = y.clamp(0.0, 1.0);
    match curve {
        ToneCurve::Smoothstep => {
            let x = 0.5 - ((1.0 - 2.0 * y).asin() / 3.0).sin();
            x.clamp(0.0, 1.0)
        }
        ToneCurve::Identity => y,
    }
}

/// Derivative of [`tone_map`].
pub fn tone_derivative(curve: ToneCurve, x: f64) -> f64 {
    match curve {
        ToneCurve::Smoothstep => 6.0 * x * (1.0 - x),
        ToneCurve::Identity => 1.0,
    }
}

/// Highlight soft-roll applied by inverse white balance above
/// [`SOFTROLL_THRESHOLD`]: a monotone cubic shoulder fixing `h(t) = t`,
/// `h'(t) = 1`, `h(1) = 1`, `h'(1) = 0`.
pub fn highlight_softroll(y: f64) -> f64 {
    let t = SOFTROLL_THRESHOLD;
    if y <= t {
        return y;
    }
    let s = ((y - t) / (1.0 - t)).min(1.0);
    t + (1.0 - t) * (s + s * s * (1.0 - s))
}

// ---------------------------------------------------------------------------
// per-pixel chains
// ---------------------------------------------------------------------------

/// Forward value/tangent propagation for one pixel.
///
/// Returns the output jet and whether any clamp engaged or the input touched
/// the `[0, 1]` boundary.
pub fn ptp_jvp_pixel(p: &PtpParams, jet: PixelJet) -> (PixelJet, bool) {
    let mut v = jet.value;
    let mut t = jet.tangent;
    let mut saturated = !v.iter().all(|&c| c > 0.0 && c < 1.0);

    // White balance.
    for c in 0..3 {
        let y = v[c] * p.wb_gains[c];
        let yc = y.clamp(0.0, 1.0);
        if y == yc {
            t[c] *= p.wb_gains[c];
        } else {
            t[c] = 0.0;
            saturated = true;
        }
        v[c] = yc;
    }

    // Color correction.
    let mv = mat_vec(&p.ccm, v);
    let mt = mat_vec(&p.ccm, t);
    for c in 0..3 {
        let yc = mv[c].clamp(0.0, 1.0);
        if mv[c] == yc {
            t[c] = mt[c];
        } else {
            t[c] = 0.0;
            saturated = true;
        }
        v[c] = yc;
    }

    // Gamma compression and tone mapping are bijections on [0, 1].
    for c in 0..3 {
        let d = gamma_derivative(p.gamma, v[c]);
        v[c] = gamma_compress(p.gamma, v[c]);
        t[c] = if t[c] == 0.0 { 0.0 } else { d * t[c] };
        let d = tone_derivative(p.tone, v[c]);
        v[c] = tone_map(p.tone, v[c]);
        t[c] *= d;
    }

    (PixelJet { value: v, tangent: t }, saturated)
}

/// Forward chain for one pixel, in f64.
pub fn ptp_forward_pixel(p: &PtpParams, rgb: [f64; 3]) -> [f64; 3] {
    ptp_jvp_pixel(
        p,
        PixelJet {
            value: rgb,
            tangent: [0.0; 3],
        },
    )
    .0
    .value
}

/// Inverse chain for one pixel, in f64. Output is clamped to `[0, 1]`.
pub fn ptp_inverse_pixel(p: &PtpParams, rgb: [f64; 3]) -> [f64; 3] {
    let mut v = rgb;
    for c in 0..3 {
        v[c] = gamma_expand(p.gamma, tone_unmap(p.tone, v[c]));
    }
    v = mat_vec(&p.inv_ccm, v);
    for c in 0..3 {
        v[c] = invert_wb_sample(v[c], p.wb_gains[c]);
    }
    v
}

#[inline]
fn invert_wb_sample(y: f64, gain: f64) -> f64 {
    let out = if gain > 1.0 {
        highlight_softroll(y.min(1.0)) / gain
    } else {
        y / gain
    };
    out.clamp(0.0, 1.0)
}

/// True when the forward chain keeps `rgb` at least `margin` inside every
/// stage's lossless region: no clamp engages, white balance stays below the
/// soft-roll threshold for gains above one, and (for positive margins) the
/// pixel stays clear of the piecewise-curve breakpoints where
/// finite-difference oracles are invalid.
///
/// Round-trip checks use `margin = 0`; derivative checks against central
/// differences use a margin comfortably larger than the step size.
pub fn forward_unclipped(p: &PtpParams, rgb: [f64; 3], margin: f64) -> bool {
    let mut v = rgb;
    for c in 0..3 {
        if v[c] < margin || v[c] > 1.0 - margin || v[c].is_nan() {
            return false;
        }
        v[c] *= p.wb_gains[c];
        let limit = if p.wb_gains[c] > 1.0 { SOFTROLL_THRESHOLD } else { 1.0 };
        if v[c] < margin || v[c] > limit - margin {
            return false;
        }
    }
    let u = mat_vec(&p.ccm, v);
    u.iter().all(|&x| x >= margin && x <= 1.0 - margin)
}

/// Margin under which central differences with step 1e-4 stay inside one
/// smooth branch of every curve (the sRGB toe breakpoint sits at 0.0031).
pub const FD_SAFE_MARGIN: f64 = 0.02;

// ---------------------------------------------------------------------------
// image-level stage operations
// ---------------------------------------------------------------------------

fn check_gains(gains: [f64; 3]) -> Result<()> {
    if gains.iter().any(|&g| !g.is_finite() || g <= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "wb gains must be positive, got {gains:?}"
        )));
    }
    Ok(())
}

fn map_rgb(
    img: (&ImagePlane, &ImagePlane, &ImagePlane),
    f: impl Fn([f64; 3]) -> [f64; 3] + Sync,
) -> (ImagePlane, ImagePlane, ImagePlane) {
    let (r, g, b) = img;
    let (w, h) = (r.width(), r.height());
    let rows: Vec<(Vec<f32>, Vec<f32>, Vec<f32>)> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut ro = Vec::with_capacity(w);
            let mut go = Vec::with_capacity(w);
            let mut bo = Vec::with_capacity(w);
            for x in 0..w {
                let out = f([r.get(x, y) as f64, g.get(x, y) as f64, b.get(x, y) as f64]);
                ro.push(out[0] as f32);
                go.push(out[1] as f32);
                bo.push(out[2] as f32);
            }
            (ro, go, bo)
        })
        .collect();
    let mut ro = Vec::with_capacity(w * h);
    let mut go = Vec::with_capacity(w * h);
    let mut bo = Vec::with_capacity(w * h);
    for (rr, gg, bb) in rows {
        ro.extend(rr);
        go.extend(gg);
        bo.extend(bb);
    }
    (
        ImagePlane::from_vec(w, h, ro).expect("mapped plane"),
        ImagePlane::from_vec(w, h, go).expect("mapped plane"),
        ImagePlane::from_vec(w, h, bo).expect("mapped plane"),
    )
}

/// Per-channel white-balance gains, clamped to `[0, 1]`.
pub fn apply_wb(x: &LinearImage, gains: [f64; 3]) -> Result<LinearImage> {
    check_gains(gains)?;
    let (r, g, b) = map_rgb((&x.r, &x.g, &x.b), |v| {
        [
            (v[0] * gains[0]).clamp(0.0, 1.0),
            (v[1] * gains[1]).clamp(0.0, 1.0),
            (v[2] * gains[2]).clamp(0.0, 1.0),
        ]
    });
    LinearImage::new(r, g, b)
}

/// Inverse white balance with the highlight soft-roll for gains above one.
pub fn invert_wb(x: &LinearImage, gains: [f64; 3]) -> Result<LinearImage> {
    check_gains(gains)?;
    let (r, g, b) = map_rgb((&x.r, &x.g, &x.b), |v| {
        [
            invert_wb_sample(v[0], gains[0]),
            invert_wb_sample(v[1], gains[1]),
            invert_wb_sample(v[2], gains[2]),
        ]
    });
    LinearImage::new(r, g, b)
}

/// Per-pixel 3x3 color correction, clamped to `[0, 1]`.
pub fn apply_ccm(x: &LinearImage, ccm: &[f64; 9]) -> Result<LinearImage> {
    if det3(ccm).abs() <= 1e-8 {
        return Err(Error::SingularCcm);
    }
    let ccm = *ccm;
    let (r, g, b) = map_rgb((&x.r, &x.g, &x.b), |v| {
        let out = mat_vec(&ccm, v);
        [
            out[0].clamp(0.0, 1.0),
            out[1].clamp(0.0, 1.0),
            out[2].clamp(0.0, 1.0),
        ]
    });
    LinearImage::new(r, g, b)
}

/// Inverse color correction; unclamped, so out-of-gamut values survive.
pub fn invert_ccm(x: &LinearImage, ccm: &[f64; 9]) -> Result<LinearImage> {
    let inv = invert3(ccm)?;
    let (r, g, b) = map_rgb((&x.r, &x.g, &x.b), |v| mat_vec(&inv, v));
    LinearImage::new(r, g, b)
}

// ---------------------------------------------------------------------------
// full chains over images
// ---------------------------------------------------------------------------

/// Forward chain WB -> CCM -> gamma -> tone over a linear image.
pub fn ptp_forward(x: &LinearImage, p: &PtpParams) -> SrgbImage {
    let (r, g, b) = map_rgb((&x.r, &x.g, &x.b), |v| ptp_forward_pixel(p, v));
    SrgbImage { r, g, b }
}

/// Inverse chain tone -> gamma -> CCM -> WB over an sRGB image.
pub fn ptp_inverse(y: &SrgbImage, p: &PtpParams) -> LinearImage {
    let (r, g, b) = map_rgb((&y.r, &y.g, &y.b), |v| ptp_inverse_pixel(p, v));
    LinearImage { r, g, b }
}

/// Forward chain with exact directional derivatives.
///
/// The value part is identical to [`ptp_forward`]; the tangent is the
/// Jacobian-vector product. Pixels where a clamp engaged, or whose input
/// touches the `[0, 1]` boundary, are flagged and their clamped channels
/// carry a zero tangent.
pub fn ptp_jvp(
    x: &LinearImage,
    tangent: &TangentImage,
    p: &PtpParams,
) -> Result<(SrgbImage, TangentImage, SaturationMask)> {
    if x.width() != tangent.width() || x.height() != tangent.height() {
        return Err(Error::DimensionMismatch(
            "tangent and image sizes differ".into(),
        ));
    }
    let (w, h) = (x.width(), x.height());
    struct Row {
        v: [Vec<f32>; 3],
        t: [Vec<f32>; 3],
        sat: Vec<bool>,
    }
    let rows: Vec<Row> = (0..h)
        .into_par_iter()
        .map(|yy| {
            let mut row = Row {
                v: [Vec::with_capacity(w), Vec::with_capacity(w), Vec::with_capacity(w)],
                t: [Vec::with_capacity(w), Vec::with_capacity(w), Vec::with_capacity(w)],
                sat: Vec::with_capacity(w),
            };
            for xx in 0..w {
                let jet = PixelJet {
                    value: x.pixel(xx, yy).map(|v| v as f64),
                    tangent: tangent.pixel(xx, yy).map(|v| v as f64),
                };
                let (out, sat) = ptp_jvp_pixel(p, jet);
                for c in 0..3 {
                    row.v[c].push(out.value[c] as f32);
                    row.t[c].push(out.tangent[c] as f32);
                }
                row.sat.push(sat);
            }
            row
        })
        .collect();

    let mut v: [Vec<f32>; 3] = [Vec::with_capacity(w * h), Vec::with_capacity(w * h), Vec::with_capacity(w * h)];
    let mut t: [Vec<f32>; 3] = [Vec::with_capacity(w * h), Vec::with_capacity(w * h), Vec::with_capacity(w * h)];
    let mut sat = Vec::with_capacity(w * h);
    for row in rows {
        for c in 0..3 {
            v[c].extend(&row.v[c]);
            t[c].extend(&row.t[c]);
        }
        sat.extend(row.sat);
    }
    let plane = |d: Vec<f32>| ImagePlane::from_vec(w, h, d).expect("jvp plane");
    let [vr, vg, vb] = v;
    let [tr, tg, tb] = t;
    Ok((
        SrgbImage {
            r: plane(vr),
            g: plane(vg),
            b: plane(vb),
        },
        TangentImage {
            r: plane(tr),
            g: plane(tg),
            b: plane(tb),
        },
        SaturationMask {
            width: w,
            height: h,
            data: sat,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::DetRng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    /// A plausible camera-to-display matrix with rows summing to 1.
    pub(crate) fn camera_ccm() -> [f64; 9] {
        [1.66, -0.55, -0.11, -0.18, 1.42, -0.24, 0.02, -0.51, 1.49]
    }

    fn srgb_smoothstep_params(gains: [f64; 3], ccm: [f64; 9]) -> PtpParams {
        PtpParams::new(gains, ccm, GammaCurve::SrgbStandard, ToneCurve::Smoothstep).unwrap()
    }

    #[test]
    fn wb_scales_channels() {
        let img = LinearImage::filled(2, 2, [0.1, 0.2, 0.2]);
        let out = apply_wb(&img, [2.0, 1.0, 1.5]).unwrap();
        assert_eq!(out.pixel(0, 0), [0.2, 0.2, 0.3]);
    }

    #[test]
    fn wb_unit_gain_is_identity() {
        let img = LinearImage::filled(2, 2, [0.37, 0.11, 0.93]);
        assert_eq!(apply_wb(&img, [1.0; 3]).unwrap(), img);
    }

    #[test]
    fn wb_clamps_highlights() {
        let img = LinearImage::filled(1, 1, [0.8, 0.1, 0.1]);
        let out = apply_wb(&img, [2.0, 1.0, 1.0]).unwrap();
        assert_eq!(out.pixel(0, 0)[0], 1.0);
    }

    #[test]
    fn wb_rejects_nonpositive_gain() {
        let img = LinearImage::filled(1, 1, [0.5; 3]);
        assert!(apply_wb(&img, [0.0, 1.0, 1.0]).is_err());
        assert!(invert_wb(&img, [-1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn invert_wb_roundtrip_below_softroll() {
        let img = LinearImage::filled(1, 1, [0.3; 3]);
        let fwd = apply_wb(&img, [2.0, 1.0, 1.5]).unwrap();
        let back = invert_wb(&fwd, [2.0, 1.0, 1.5]).unwrap();
        for c in 0..3 {
            assert!(close(back.pixel(0, 0)[c] as f64, 0.3, 1e-6));
        }
    }

    #[test]
    fn invert_wb_unit_gain_is_identity() {
        let img = LinearImage::filled(2, 2, [0.42, 0.77, 0.05]);
        assert_eq!(invert_wb(&img, [1.0; 3]).unwrap(), img);
    }

    #[test]
    fn invert_wb_clip_boundary() {
        // softroll(1) = 1, so a clipped white maps to the clip boundary 1/g.
        assert_eq!(highlight_softroll(1.0), 1.0);
        let img = LinearImage::filled(1, 1, [1.0, 0.5, 0.5]);
        let out = invert_wb(&img, [2.0, 1.0, 1.0]).unwrap();
        assert_eq!(out.pixel(0, 0)[0], 0.5);
    }

    #[test]
    fn softroll_shape() {
        assert_eq!(highlight_softroll(0.5), 0.5);
        assert_eq!(highlight_softroll(0.9), 0.9);
        // Monotone shoulder inside (t, 1).
        let mut prev = 0.9;
        for i in 1..=100 {
            let y = 0.9 + 0.1 * i as f64 / 100.0;
            let h = highlight_softroll(y);
            assert!(h >= prev && h <= 1.0 + 1e-15);
            prev = h;
        }
    }

    #[test]
    fn ccm_identity_is_identity() {
        let img = LinearImage::filled(2, 2, [0.2, 0.5, 0.7]);
        let ident = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        assert_eq!(apply_ccm(&img, &ident).unwrap(), img);
    }

    #[test]
    fn ccm_inverse_roundtrip() {
        let ccm = camera_ccm();
        let mut rng = DetRng::new(5);
        for _ in 0..200 {
            let v = [
                rng.uniform(0.2, 0.8) as f32,
                rng.uniform(0.2, 0.8) as f32,
                rng.uniform(0.2, 0.8) as f32,
            ];
            let img = LinearImage::filled(1, 1, v);
            let fwd = apply_ccm(&img, &ccm).unwrap();
            // Only check pixels the forward clamp left untouched.
            let raw = mat_vec(&ccm, [v[0] as f64, v[1] as f64, v[2] as f64]);
            if raw.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
                continue;
            }
            let back = invert_ccm(&fwd, &ccm).unwrap();
            for c in 0..3 {
                assert!(close(back.pixel(0, 0)[c] as f64, v[c] as f64, 1e-5));
            }
        }
    }

    #[test]
    fn ccm_row_sum_preserves_gray() {
        let ccm = [0.6, 0.3, 0.1, 0.2, 0.7, 0.1, 0.1, 0.3, 0.6];
        let img = LinearImage::filled(2, 2, [0.5; 3]);
        let out = apply_ccm(&img, &ccm).unwrap();
        assert_eq!(out.pixel(0, 0), [0.5, 0.5, 0.5]);
    }

    #[test]
    fn ccm_singular_rejected() {
        let img = LinearImage::filled(1, 1, [0.5; 3]);
        let singular = [1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        assert!(matches!(apply_ccm(&img, &singular), Err(Error::SingularCcm)));
        assert!(invert_ccm(&img, &singular).is_err());
    }

    #[test]
    fn gamma_endpoints() {
        for curve in [GammaCurve::SrgbStandard, GammaCurve::Power(2.2)] {
            assert_eq!(gamma_compress(curve, 0.0), 0.0);
            assert!(close(gamma_compress(curve, 1.0), 1.0, 1e-12));
        }
    }

    #[test]
    fn gamma_srgb_quarter() {
        // 1.055 * 0.25^(1/2.4) - 0.055
        assert!(close(
            gamma_compress(GammaCurve::SrgbStandard, 0.25),
            0.537099,
            1e-5
        ));
    }

    #[test]
    fn gamma_inverse_pair_on_grid() {
        for curve in [GammaCurve::SrgbStandard, GammaCurve::Power(2.2), GammaCurve::Power(0.7)] {
            for i in 0..=10_000 {
                let x = i as f64 / 10_000.0;
                let y = gamma_expand(curve, gamma_compress(curve, x));
                assert!(close(y, x, 1e-6), "curve {curve:?} x {x} got {y}");
            }
        }
    }

    #[test]
    fn tone_fixed_points_and_quarter() {
        assert_eq!(tone_map(ToneCurve::Smoothstep, 0.0), 0.0);
        assert_eq!(tone_map(ToneCurve::Smoothstep, 1.0), 1.0);
        assert_eq!(tone_map(ToneCurve::Smoothstep, 0.5), 0.5);
        assert_eq!(tone_map(ToneCurve::Smoothstep, 0.25), 0.15625);
    }

    #[test]
    fn tone_unmap_closed_form() {
        assert!(close(tone_unmap(ToneCurve::Smoothstep, 0.15625), 0.25, 1e-6));
        for i in 0..=10_000 {
            let y = i as f64 / 10_000.0;
            let x = tone_unmap(ToneCurve::Smoothstep, y);
            assert!(close(tone_map(ToneCurve::Smoothstep, x), y, 1e-6));
        }
    }

    #[test]
    fn curves_strictly_increasing() {
        for i in 1..1000 {
            let a = (i - 1) as f64 / 1000.0;
            let b = i as f64 / 1000.0;
            assert!(gamma_compress(GammaCurve::SrgbStandard, b) > gamma_compress(GammaCurve::SrgbStandard, a));
            assert!(gamma_compress(GammaCurve::Power(2.2), b) > gamma_compress(GammaCurve::Power(2.2), a));
            assert!(tone_map(ToneCurve::Smoothstep, b) > tone_map(ToneCurve::Smoothstep, a));
        }
    }

    #[test]
    fn forward_identity_params_is_identity() {
        let p = PtpParams::identity();
        let mut rng = DetRng::new(11);
        let img = LinearImage {
            r: ImagePlane::from_fn(4, 4, |_, _| rng.next_f64() as f32),
            g: ImagePlane::from_fn(4, 4, |_, _| rng.next_f64() as f32),
            b: ImagePlane::from_fn(4, 4, |_, _| rng.next_f64() as f32),
        };
        let out = ptp_forward(&img, &p);
        assert_eq!(out.r, img.r);
        assert_eq!(out.g, img.g);
        assert_eq!(out.b, img.b);
    }

    #[test]
    fn forward_gray_chain_value() {
        // Stage-by-stage scalar evaluation: gains 1, row-sum-1 ccm keeps
        // (0.5, 0.5, 0.5); power(2.2) gives 0.5^(1/2.2); smoothstep maps it.
        let x = 0.5f64.powf(1.0 / 2.2);
        let expect = x * x * (3.0 - 2.0 * x);
        assert!(close(expect, 0.820_359, 1e-5));

        let p = PtpParams::new(
            [1.0; 3],
            [0.6, 0.3, 0.1, 0.2, 0.7, 0.1, 0.1, 0.3, 0.6],
            GammaCurve::Power(2.2),
            ToneCurve::Smoothstep,
        )
        .unwrap();
        let out = ptp_forward_pixel(&p, [0.5; 3]);
        for c in 0..3 {
            assert!(close(out[c], expect, 1e-9), "channel {c}: {}", out[c]);
        }
    }

    #[test]
    fn forward_preserves_black_and_white() {
        let p = srgb_smoothstep_params([1.0; 3], camera_ccm());
        assert_eq!(ptp_forward_pixel(&p, [0.0; 3]), [0.0; 3]);
        let w = ptp_forward_pixel(&p, [1.0; 3]);
        for c in 0..3 {
            assert!(close(w[c], 1.0, 1e-12));
        }
    }

    #[test]
    fn inverse_of_forward_recovers_gray() {
        let p = PtpParams::new(
            [1.0; 3],
            [0.6, 0.3, 0.1, 0.2, 0.7, 0.1, 0.1, 0.3, 0.6],
            GammaCurve::Power(2.2),
            ToneCurve::Smoothstep,
        )
        .unwrap();
        let y = ptp_forward_pixel(&p, [0.5; 3]);
        let x = ptp_inverse_pixel(&p, y);
        for c in 0..3 {
            assert!(close(x[c], 0.5, 1e-6));
        }
    }

    #[test]
    fn inverse_identity_params_is_identity() {
        let p = PtpParams::identity();
        let img = SrgbImage::filled(3, 3, [0.21, 0.55, 0.83]);
        let back = ptp_inverse(&img, &p);
        assert_eq!(back.pixel(1, 1), [0.21, 0.55, 0.83]);
    }

    #[test]
    fn roundtrip_non_clipping() {
        let mut rng = DetRng::new(17);
        let p = srgb_smoothstep_params([1.2, 1.0, 0.85], camera_ccm());
        let mut checked = 0;
        while checked < 2000 {
            let rgb = [
                rng.uniform(0.05, 0.95),
                rng.uniform(0.05, 0.95),
                rng.uniform(0.05, 0.95),
            ];
            if !forward_unclipped(&p, rgb, 0.0) {
                continue;
            }
            let back = ptp_inverse_pixel(&p, ptp_forward_pixel(&p, rgb));
            for c in 0..3 {
                assert!(close(back[c], rgb[c], 1e-4), "{rgb:?} -> {back:?}");
            }
            checked += 1;
        }
    }

    #[test]
    fn jvp_zero_tangent_stays_zero() {
        let p = srgb_smoothstep_params([1.1, 1.0, 0.9], camera_ccm());
        let (out, _) = ptp_jvp_pixel(
            &p,
            PixelJet {
                value: [0.3, 0.5, 0.7],
                tangent: [0.0; 3],
            },
        );
        assert_eq!(out.tangent, [0.0; 3]);
    }

    #[test]
    fn jvp_identity_params_passes_tangent() {
        let p = PtpParams::identity();
        let (out, sat) = ptp_jvp_pixel(
            &p,
            PixelJet {
                value: [0.3, 0.5, 0.7],
                tangent: [1.0, -2.0, 0.25],
            },
        );
        assert!(!sat);
        for c in 0..3 {
            assert!(close(out.tangent[c], [1.0, -2.0, 0.25][c], 1e-12));
        }
    }

    #[test]
    fn jvp_matches_finite_differences() {
        let mut rng = DetRng::new(23);
        let curves = [GammaCurve::SrgbStandard, GammaCurve::Power(2.2)];
        let tones = [ToneCurve::Smoothstep, ToneCurve::Identity];
        for &gamma in &curves {
            for &tone in &tones {
                let p = PtpParams::new([1.15, 1.0, 0.88], camera_ccm(), gamma, tone).unwrap();
                let mut checked = 0;
                while checked < 200 {
                    let v = [
                        rng.uniform(0.05, 0.95),
                        rng.uniform(0.05, 0.95),
                        rng.uniform(0.05, 0.95),
                    ];
                    if !forward_unclipped(&p, v, FD_SAFE_MARGIN) {
                        continue;
                    }
                    let t = [rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)];
                    let (jet, sat) = ptp_jvp_pixel(&p, PixelJet { value: v, tangent: t });
                    assert!(!sat);
                    let h = 1e-4;
                    let plus = ptp_forward_pixel(&p, [v[0] + h * t[0], v[1] + h * t[1], v[2] + h * t[2]]);
                    let minus = ptp_forward_pixel(&p, [v[0] - h * t[0], v[1] - h * t[1], v[2] - h * t[2]]);
                    let mut scale = 1e-6f64;
                    for c in 0..3 {
                        scale = scale.max(jet.tangent[c].abs());
                    }
                    for c in 0..3 {
                        let fd = (plus[c] - minus[c]) / (2.0 * h);
                        assert!(
                            (fd - jet.tangent[c]).abs() / scale < 1e-3,
                            "fd {fd} vs jvp {} (v {v:?}, t {t:?})",
                            jet.tangent[c]
                        );
                    }
                    checked += 1;
                }
            }
        }
    }

    #[test]
    fn jvp_linear_in_tangent() {
        let p = srgb_smoothstep_params([1.1, 1.0, 0.9], camera_ccm());
        let v = [0.3, 0.5, 0.62];
        let t1 = [0.5, -0.2, 0.1];
        let t2 = [-0.3, 0.7, 0.4];
        let (a, b) = (1.7f64, -0.6f64);
        let combo: [f64; 3] = std::array::from_fn(|c| a * t1[c] + b * t2[c]);
        let (j1, _) = ptp_jvp_pixel(&p, PixelJet { value: v, tangent: t1 });
        let (j2, _) = ptp_jvp_pixel(&p, PixelJet { value: v, tangent: t2 });
        let (jc, _) = ptp_jvp_pixel(&p, PixelJet { value: v, tangent: combo });
        for c in 0..3 {
            assert!(close(jc.tangent[c], a * j1.tangent[c] + b * j2.tangent[c], 1e-6));
        }
    }

    #[test]
    fn jvp_image_flags_saturated_pixels() {
        let p = srgb_smoothstep_params([2.0, 1.0, 1.0], camera_ccm());
        let x = LinearImage::filled(2, 1, [0.9, 0.5, 0.5]); // 0.9 * 2 clips
        let t = TangentImage::zeros(2, 1);
        let (_, _, mask) = ptp_jvp(&x, &t, &p).unwrap();
        assert_eq!(mask.fraction(), 1.0);
    }

    #[test]
    fn params_validation() {
        let ident = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        assert!(PtpParams::new([0.0, 1.0, 1.0], ident, GammaCurve::Power(1.0), ToneCurve::Identity).is_err());
        let bad_rows = [0.5, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        assert!(PtpParams::new([1.0; 3], bad_rows, GammaCurve::Power(1.0), ToneCurve::Identity).is_err());
        assert!(PtpParams::new([1.0; 3], ident, GammaCurve::Power(0.0), ToneCurve::Identity).is_err());
    }
}
