//! Fidelity metrics (PSNR, SSIM), latent scaling statistics, and the
//! dual-domain MSE loss with analytic gradients through the tone chain.
//!
//! Reductions accumulate in f64 with fixed-order pairwise summation, so
//! results do not depend on parallelism.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ImagePlane, LinearImage, RawImage, SrgbImage, TangentImage};
use crate::ptp::{ptp_forward_pixel, ptp_jvp_pixel, PixelJet, PtpParams};

/// Pairwise-summed `f(0) + ... + f(n-1)`, deterministic and accurate.
pub fn pairwise_sum_by(n: usize, f: impl Fn(usize) -> f64) -> f64 {
    const BLOCK: usize = 4096;
    let mut partials: Vec<f64> = Vec::with_capacity(n.div_ceil(BLOCK));
    let mut i = 0;
    while i < n {
        let end = (i + BLOCK).min(n);
        let mut acc = 0.0;
        for k in i..end {
            acc += f(k);
        }
        partials.push(acc);
        i = end;
    }
    fn reduce(xs: &[f64]) -> f64 {
        match xs.len() {
            0 => 0.0,
            1 => xs[0],
            n => reduce(&xs[..n / 2]) + reduce(&xs[n / 2..]),
        }
    }
    reduce(&partials)
}

/// Images that expose their channel planes for metric computation.
pub trait PlanarImage {
    fn metric_planes(&self) -> Vec<&ImagePlane>;
}

impl PlanarImage for LinearImage {
    fn metric_planes(&self) -> Vec<&ImagePlane> {
        vec![&self.r, &self.g, &self.b]
    }
}

impl PlanarImage for SrgbImage {
    fn metric_planes(&self) -> Vec<&ImagePlane> {
        vec![&self.r, &self.g, &self.b]
    }
}

impl PlanarImage for RawImage {
    fn metric_planes(&self) -> Vec<&ImagePlane> {
        vec![&self.plane]
    }
}

impl PlanarImage for ImagePlane {
    fn metric_planes(&self) -> Vec<&ImagePlane> {
        vec![self]
    }
}

/// PSNR outcome; `exact` marks a zero-MSE comparison reported at the cap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsnrResult {
    pub db: f64,
    pub exact: bool,
}

/// PSNR cap reported for bit-identical inputs.
pub const PSNR_CAP_DB: f64 = 100.0;

/// PSNR over all channels jointly: `10 log10(peak^2 / MSE)`.
pub fn psnr<I: PlanarImage>(a: &I, b: &I, peak: f64) -> Result<PsnrResult> {
    let pa = a.metric_planes();
    let pb = b.metric_planes();
    if pa.len() != pb.len() || pa.iter().zip(&pb).any(|(x, y)| !x.same_size(y)) {
        return Err(Error::DimensionMismatch(
            "psnr inputs differ in shape".into(),
        ));
    }
    let mut sq = 0.0;
    let mut count = 0usize;
    for (x, y) in pa.iter().zip(&pb) {
        let (xd, yd) = (x.data(), y.data());
        sq += pairwise_sum_by(xd.len(), |i| {
            let d = xd[i] as f64 - yd[i] as f64;
            d * d
        });
        count += xd.len();
    }
    let mse = sq / count as f64;
    if mse == 0.0 {
        return Ok(PsnrResult {
            db: PSNR_CAP_DB,
            exact: true,
        });
    }
    Ok(PsnrResult {
        db: 10.0 * (peak * peak / mse).log10(),
        exact: false,
    })
}

/// BT.601 luma plane of a 3-channel image.
pub fn luma_plane<I: PlanarImage>(img: &I) -> Result<ImagePlane> {
    let p = img.metric_planes();
    if p.len() != 3 {
        return Err(Error::InvalidArgument(
            "luma needs a 3-channel image".into(),
        ));
    }
    let (w, h) = (p[0].width(), p[0].height());
    let data = (0..w * h)
        .map(|i| {
            0.299 * p[0].data()[i] as f64 + 0.587 * p[1].data()[i] as f64 + 0.114 * p[2].data()[i] as f64
        })
        .map(|v| v as f32)
        .collect();
    ImagePlane::from_vec(w, h, data)
}

// ---------------------------------------------------------------------------
// SSIM
// ---------------------------------------------------------------------------

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 1e-4; // (K1 L)^2, K1 = 0.01, L = 1
const SSIM_C2: f64 = 9e-4; // (K2 L)^2, K2 = 0.03

fn ssim_window_taps() -> [f64; SSIM_WINDOW] {
    let mut taps = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, t) in taps.iter_mut().enumerate() {
        *t = (-(i as f64 - c).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *t;
    }
    for t in &mut taps {
        *t /= sum;
    }
    taps
}

/// Valid-region separable convolution with a symmetric 1D window.
fn valid_sepconv(data: &[f64], w: usize, h: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut mid = vec![0.0f64; ow * h];
    for y in 0..h {
        for x in 0..ow {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                acc += t * data[y * w + x + k];
            }
            mid[y * ow + x] = acc;
        }
    }
    let mut out = vec![0.0f64; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                acc += t * mid[(y + k) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

/// Mean SSIM of two planes over valid (fully interior) 11x11 windows.
pub fn ssim_plane(a: &ImagePlane, b: &ImagePlane) -> Result<f64> {
    if !a.same_size(b) {
        return Err(Error::DimensionMismatch("ssim inputs differ in shape".into()));
    }
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {w}x{h}"
        )));
    }
    let taps = ssim_window_taps();
    let ad: Vec<f64> = a.data().iter().map(|&v| v as f64).collect();
    let bd: Vec<f64> = b.data().iter().map(|&v| v as f64).collect();
    let a2: Vec<f64> = ad.iter().map(|v| v * v).collect();
    let b2: Vec<f64> = bd.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = ad.iter().zip(&bd).map(|(x, y)| x * y).collect();

    let mu_a = valid_sepconv(&ad, w, h, &taps);
    let mu_b = valid_sepconv(&bd, w, h, &taps);
    let e_a2 = valid_sepconv(&a2, w, h, &taps);
    let e_b2 = valid_sepconv(&b2, w, h, &taps);
    let e_ab = valid_sepconv(&ab, w, h, &taps);

    let n = mu_a.len();
    let total = pairwise_sum_by(n, |i| {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_a2[i] - ma * ma;
        let vb = e_b2[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
            / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2))
    });
    Ok(total / n as f64)
}

/// Per-channel mean SSIM averaged over channels.
pub fn ssim<I: PlanarImage>(a: &I, b: &I) -> Result<f64> {
    let pa = a.metric_planes();
    let pb = b.metric_planes();
    if pa.len() != pb.len() {
        return Err(Error::DimensionMismatch("ssim channel counts differ".into()));
    }
    let mut total = 0.0;
    for (x, y) in pa.iter().zip(&pb) {
        total += ssim_plane(x, y)?;
    }
    Ok(total / pa.len() as f64)
}

// ---------------------------------------------------------------------------
// latent scaling statistics
// ---------------------------------------------------------------------------

/// 4-axis latent tensor `(batch, channel, height, width)`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentBatch {
    batch: usize,
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl LatentBatch {
    pub fn new(batch: usize, channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        let n = batch * channels * height * width;
        if batch == 0 || channels == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidArgument("latent axes must all be >= 1".into()));
        }
        if data.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "latent data length {} != {batch}x{channels}x{height}x{width}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("latent holds non-finite values".into()));
        }
        Ok(Self {
            batch,
            channels,
            height,
            width,
            data,
        })
    }

    /// Single-batch tensor from channel planes.
    pub fn from_planes(planes: &[ImagePlane]) -> Result<Self> {
        let first = planes
            .first()
            .ok_or_else(|| Error::InvalidArgument("latent needs at least one plane".into()))?;
        let (w, h) = (first.width(), first.height());
        let mut data = Vec::with_capacity(planes.len() * w * h);
        for p in planes {
            if !p.same_size(first) {
                return Err(Error::DimensionMismatch("latent planes differ in size".into()));
            }
            data.extend_from_slice(p.data());
        }
        Self::new(1, planes.len(), h, w, data)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.batch, self.channels, self.height, self.width)
    }
}

/// Grand mean and grand standard deviation over all four axes.
///
/// The deviation uses squared residuals and the population normalizer
/// `1/(b c h w)`. A constant batch yields sigma 0; rescaling then fails.
pub fn latent_scaling_factor(z: &LatentBatch) -> Result<(f64, f64)> {
    if z.len() < 2 {
        return Err(Error::InvalidArgument(
            "latent statistics need at least 2 elements".into(),
        ));
    }
    let n = z.len();
    let mean = pairwise_sum_by(n, |i| z.data[i] as f64) / n as f64;
    let var = pairwise_sum_by(n, |i| {
        let d = z.data[i] as f64 - mean;
        d * d
    }) / n as f64;
    Ok((mean, var.sqrt()))
}

/// Elementwise division by a measured sigma; the result has unit sigma.
pub fn rescale_latents(z: &LatentBatch, sigma: f64) -> Result<LatentBatch> {
    if !sigma.is_finite() || sigma <= 0.0 {
        return Err(Error::DegenerateBatch);
    }
    let data = z.data.iter().map(|&v| (v as f64 / sigma) as f32).collect();
    LatentBatch::new(z.batch, z.channels, z.height, z.width, data)
}

// ---------------------------------------------------------------------------
// dual-domain loss
// ---------------------------------------------------------------------------

/// Weights of the RAW/linear-domain and sRGB-domain MSE terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_raw: f64,
    pub lambda_rgb: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_raw: 1.0,
            lambda_rgb: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_raw < 0.0 || self.lambda_rgb < 0.0 {
            return Err(Error::InvalidArgument("loss weights must be non-negative".into()));
        }
        if self.lambda_raw == 0.0 && self.lambda_rgb == 0.0 {
            return Err(Error::InvalidArgument("loss weights must not both be zero".into()));
        }
        Ok(())
    }
}

/// Loss value, analytic gradient w.r.t. the prediction, and the fraction of
/// pixels masked out for saturation.
#[derive(Debug, Clone)]
pub struct DualDomainLoss {
    pub loss: f64,
    pub gradient: TangentImage,
    pub mask_fraction: f64,
}

/// `lambda_raw * MSE(pred, gt) + lambda_rgb * MSE(F(pred), F(gt))` with `F`
/// the forward tone chain; the gradient is exact via three basis-tangent
/// Jacobian columns per pixel.
///
/// Pixels saturating the chain at `pred` are excluded from both terms and
/// get zero gradient; their share is reported as `mask_fraction`. The
/// normalizer is the total sample count (mean over all samples), so the
/// weights are resolution-independent.
pub fn dual_domain_mse(
    pred: &LinearImage,
    gt: &LinearImage,
    p: &PtpParams,
    w: LossWeights,
) -> Result<DualDomainLoss> {
    w.validate()?;
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(Error::DimensionMismatch("pred and gt sizes differ".into()));
    }
    let (iw, ih) = (pred.width(), pred.height());
    let n_samples = (3 * iw * ih) as f64;
    let use_rgb = w.lambda_rgb > 0.0;

    let mut loss_terms: Vec<f64> = Vec::with_capacity(iw * ih);
    let mut grad = [
        vec![0.0f32; iw * ih],
        vec![0.0f32; iw * ih],
        vec![0.0f32; iw * ih],
    ];
    let mut masked = 0usize;

    for y in 0..ih {
        for x in 0..iw {
            let idx = y * iw + x;
            let pv = pred.pixel(x, y).map(|v| v as f64);
            let gv = gt.pixel(x, y).map(|v| v as f64);
            let d_lin: [f64; 3] = std::array::from_fn(|c| pv[c] - gv[c]);

            if !use_rgb {
                loss_terms.push(w.lambda_raw * (d_lin[0] * d_lin[0] + d_lin[1] * d_lin[1] + d_lin[2] * d_lin[2]));
                for c in 0..3 {
                    grad[c][idx] = (2.0 * w.lambda_raw * d_lin[c] / n_samples) as f32;
                }
                continue;
            }

            // Jacobian columns of the forward chain at pred.
            let mut cols = [[0.0f64; 3]; 3];
            let mut sat = false;
            for c in 0..3 {
                let mut t = [0.0; 3];
                t[c] = 1.0;
                let (jet, s) = ptp_jvp_pixel(p, PixelJet { value: pv, tangent: t });
                cols[c] = jet.tangent;
                sat |= s;
            }
            if sat {
                masked += 1;
                continue;
            }
            let f_pred = ptp_forward_pixel(p, pv);
            let f_gt = ptp_forward_pixel(p, gv);
            let d_rgb: [f64; 3] = std::array::from_fn(|k| f_pred[k] - f_gt[k]);

            let term_raw = d_lin[0] * d_lin[0] + d_lin[1] * d_lin[1] + d_lin[2] * d_lin[2];
            let term_rgb = d_rgb[0] * d_rgb[0] + d_rgb[1] * d_rgb[1] + d_rgb[2] * d_rgb[2];
            loss_terms.push(w.lambda_raw * term_raw + w.lambda_rgb * term_rgb);

            for c in 0..3 {
                // (J^T d)_c with J columns indexed by input channel.
                let jt_d = cols[c][0] * d_rgb[0] + cols[c][1] * d_rgb[1] + cols[c][2] * d_rgb[2];
                grad[c][idx] =
                    ((2.0 * w.lambda_raw * d_lin[c] + 2.0 * w.lambda_rgb * jt_d) / n_samples) as f32;
            }
        }
    }

    let loss = pairwise_sum_by(loss_terms.len(), |i| loss_terms[i]) / n_samples;
    let [gr, gg, gb] = grad;
    Ok(DualDomainLoss {
        loss,
        gradient: TangentImage {
            r: ImagePlane::from_vec(iw, ih, gr).expect("gradient plane"),
            g: ImagePlane::from_vec(iw, ih, gg).expect("gradient plane"),
            b: ImagePlane::from_vec(iw, ih, gb).expect("gradient plane"),
        },
        mask_fraction: masked as f64 / (iw * ih) as f64,
    })
}
