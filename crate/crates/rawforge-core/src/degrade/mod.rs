//! Detail degradation in the display-referred domain: blur, resize, and
//! JPEG compression stages with sampled parameters, explicitly excluding any
//! noise stage (sensor noise is injected in the RAW domain instead).
//!
//! A [`DegradationConfig`] carries parameter ranges; [`resolve`] draws one
//! concrete [`ResolvedDegradation`] per image, which is recorded alongside
//! synthesized outputs so every sample is reproducible.

mod convolve;
mod jpeg;
mod kernel;
mod resize;

pub use convolve::convolve_plane;
pub use jpeg::{jpeg_simulate, scaled_quant_table};
pub use kernel::{make_kernel, Kernel2D, KernelSpec};
pub use resize::{even_target, resize_plane, ResizeFilter, ResizeSpec};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::SrgbImage;
use crate::rng::DetRng;

/// Smallest intermediate dimension `apply_resolved` will resize down to, so
/// the largest blur kernel still fits mid-chain.
const MIN_INTERMEDIATE: usize = 24;

/// Range-bearing blur stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlurStageSpec {
    #[serde(default = "default_prob")]
    pub prob: f64,
    pub iso_weight: f64,
    pub aniso_weight: f64,
    pub sinc_weight: f64,
    pub size_choices: Vec<usize>,
    pub sigma_range: [f64; 2],
    pub theta_range: [f64; 2],
    pub cutoff_range: [f64; 2],
}

/// Range-bearing resize stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResizeStageSpec {
    #[serde(default = "default_prob")]
    pub prob: f64,
    pub scale_range: [f64; 2],
    pub filters: Vec<ResizeFilter>,
}

/// Range-bearing compression stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressStageSpec {
    #[serde(default = "default_prob")]
    pub prob: f64,
    pub quality_range: [u8; 2],
}

fn default_prob() -> f64 {
    1.0
}

/// One stage of the degradation chain, before parameter sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StageSpec {
    Blur(BlurStageSpec),
    Resize(ResizeStageSpec),
    Compress(CompressStageSpec),
}

/// Full degradation configuration (JSON document of the `degrade` CLI).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationConfig {
    pub stages: Vec<StageSpec>,
    #[serde(default)]
    pub second_order: bool,
    #[serde(default = "default_final_scale")]
    pub final_scale: f64,
    #[serde(default = "default_final_filter")]
    pub final_filter: ResizeFilter,
    #[serde(default)]
    pub seed: u64,
}

fn default_final_scale() -> f64 {
    1.0
}

fn default_final_filter() -> ResizeFilter {
    ResizeFilter::Bicubic
}

impl DegradationConfig {
    /// Parses a config, rejecting noise stages before typed deserialization
    /// so the refusal is explicit rather than an unknown-variant error.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|source| Error::Json {
            path: "<config>".into(),
            source,
        })?;
        if let Some(stages) = value.get("stages").and_then(|s| s.as_array()) {
            for stage in stages {
                if stage.get("kind").and_then(|k| k.as_str()) == Some("noise") {
                    return Err(Error::NoiseStageForbidden);
                }
            }
        }
        let cfg: DegradationConfig =
            serde_json::from_value(value).map_err(|source| Error::Json {
                path: "<config>".into(),
                source,
            })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::InvalidArgument(
                "degradation config needs at least one stage".into(),
            ));
        }
        for stage in &self.stages {
            match stage {
                StageSpec::Blur(b) => {
                    if b.size_choices.is_empty()
                        || b.size_choices.iter().any(|&s| s % 2 == 0 || !(7..=21).contains(&s))
                    {
                        return Err(Error::InvalidArgument(
                            "blur sizes must be odd and within 7..=21".into(),
                        ));
                    }
                    if !b.sigma_range.iter().all(|s| s.is_finite()) || b.sigma_range[0] <= 0.0 || b.sigma_range[0] > b.sigma_range[1] {
                        return Err(Error::InvalidArgument("bad blur sigma range".into()));
                    }
                    if !b.cutoff_range.iter().all(|s| s.is_finite()) || b.cutoff_range[0] <= 0.0 || b.cutoff_range[0] > b.cutoff_range[1] {
                        return Err(Error::InvalidArgument("bad sinc cutoff range".into()));
                    }
                    let wsum = b.iso_weight + b.aniso_weight + b.sinc_weight;
                    if !wsum.is_finite()
                        || wsum <= 0.0
                        || b.iso_weight < 0.0
                        || b.aniso_weight < 0.0
                        || b.sinc_weight < 0.0
                    {
                        return Err(Error::InvalidArgument("bad blur family weights".into()));
                    }
                }
                StageSpec::Resize(r) => {
                    if !(0.25..=1.5).contains(&r.scale_range[0])
                        || !(0.25..=1.5).contains(&r.scale_range[1])
                        || r.scale_range[0] > r.scale_range[1]
                        || r.filters.is_empty()
                    {
                        return Err(Error::InvalidArgument(
                            "resize scale range must lie within [0.25, 1.5]".into(),
                        ));
                    }
                }
                StageSpec::Compress(c) => {
                    if !(1..=100).contains(&c.quality_range[0])
                        || !(1..=100).contains(&c.quality_range[1])
                        || c.quality_range[0] > c.quality_range[1]
                    {
                        return Err(Error::InvalidArgument(
                            "jpeg quality range must lie within [1, 100]".into(),
                        ));
                    }
                }
            }
        }
        if !(0.25..=1.5).contains(&self.final_scale) {
            return Err(Error::InvalidArgument(
                "final_scale must lie within [0.25, 1.5]".into(),
            ));
        }
        Ok(())
    }

    /// Two-pass blur/resize/compress config with ranges following the usual
    /// second-order degradation practice, noise excluded.
    pub fn default_pipeline() -> Self {
        Self {
            stages: vec![
                StageSpec::Blur(BlurStageSpec {
                    prob: 1.0,
                    iso_weight: 0.65,
                    aniso_weight: 0.25,
                    sinc_weight: 0.10,
                    size_choices: vec![7, 9, 11, 13, 15, 17, 19, 21],
                    sigma_range: [0.2, 3.0],
                    theta_range: [0.0, std::f64::consts::PI],
                    cutoff_range: [std::f64::consts::PI / 3.0, std::f64::consts::PI],
                }),
                StageSpec::Resize(ResizeStageSpec {
                    prob: 1.0,
                    scale_range: [0.25, 1.5],
                    filters: vec![ResizeFilter::Bilinear, ResizeFilter::Bicubic, ResizeFilter::Area],
                }),
                StageSpec::Compress(CompressStageSpec {
                    prob: 1.0,
                    quality_range: [30, 95],
                }),
            ],
            second_order: true,
            final_scale: 1.0,
            final_filter: ResizeFilter::Bicubic,
            seed: 0,
        }
    }

    /// No-op chain: delta blur, unit resize, quality-100 compression.
    pub fn identity_pipeline() -> Self {
        Self {
            stages: vec![
                StageSpec::Blur(BlurStageSpec {
                    prob: 1.0,
                    iso_weight: 1.0,
                    aniso_weight: 0.0,
                    sinc_weight: 0.0,
                    size_choices: vec![7],
                    sigma_range: [1e-3, 1e-3],
                    theta_range: [0.0, 0.0],
                    cutoff_range: [1.0, 1.0],
                }),
                StageSpec::Resize(ResizeStageSpec {
                    prob: 1.0,
                    scale_range: [1.0, 1.0],
                    filters: vec![ResizeFilter::Bilinear],
                }),
                StageSpec::Compress(CompressStageSpec {
                    prob: 1.0,
                    quality_range: [100, 100],
                }),
            ],
            second_order: false,
            final_scale: 1.0,
            final_filter: ResizeFilter::Bicubic,
            seed: 0,
        }
    }
}

/// One fully sampled stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResolvedStage {
    Blur(KernelSpec),
    Resize(ResizeSpec),
    Compress { quality: u8 },
}

/// Concrete degradation instance: every sampled value pinned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedDegradation {
    pub stages: Vec<ResolvedStage>,
    pub final_scale: f64,
    pub final_filter: ResizeFilter,
    pub seed: u64,
}

/// Samples concrete stage parameters from the config under `seed`.
///
/// With `second_order` the stage list is drawn twice with independent
/// parameters.
pub fn resolve(cfg: &DegradationConfig, seed: u64) -> Result<ResolvedDegradation> {
    cfg.validate()?;
    let mut rng = DetRng::new(seed);
    let passes = if cfg.second_order { 2 } else { 1 };
    let mut stages = Vec::new();
    for _ in 0..passes {
        for spec in &cfg.stages {
            match spec {
                StageSpec::Blur(b) => {
                    let gate = rng.next_f64();
                    if gate >= b.prob {
                        continue;
                    }
                    let size = b.size_choices[rng.below(b.size_choices.len() as u64) as usize];
                    let total = b.iso_weight + b.aniso_weight + b.sinc_weight;
                    let pick = rng.uniform(0.0, total);
                    let kernel = if pick < b.iso_weight {
                        KernelSpec::IsoGaussian {
                            size,
                            sigma: rng.uniform(b.sigma_range[0], b.sigma_range[1]),
                        }
                    } else if pick < b.iso_weight + b.aniso_weight {
                        KernelSpec::AnisoGaussian {
                            size,
                            sigma_x: rng.uniform(b.sigma_range[0], b.sigma_range[1]),
                            sigma_y: rng.uniform(b.sigma_range[0], b.sigma_range[1]),
                            theta: rng.uniform(b.theta_range[0], b.theta_range[1]),
                        }
                    } else {
                        KernelSpec::Sinc {
                            size,
                            cutoff: rng.uniform(b.cutoff_range[0], b.cutoff_range[1]),
                        }
                    };
                    stages.push(ResolvedStage::Blur(kernel));
                }
                StageSpec::Resize(r) => {
                    let gate = rng.next_f64();
                    if gate >= r.prob {
                        continue;
                    }
                    let scale = rng.uniform(r.scale_range[0], r.scale_range[1]);
                    let filter = r.filters[rng.below(r.filters.len() as u64) as usize];
                    stages.push(ResolvedStage::Resize(ResizeSpec { scale, filter }));
                }
                StageSpec::Compress(c) => {
                    let gate = rng.next_f64();
                    if gate >= c.prob {
                        continue;
                    }
                    let span = (c.quality_range[1] - c.quality_range[0]) as u64 + 1;
                    let quality = c.quality_range[0] + rng.below(span) as u8;
                    stages.push(ResolvedStage::Compress { quality });
                }
            }
        }
    }
    Ok(ResolvedDegradation {
        stages,
        final_scale: cfg.final_scale,
        final_filter: cfg.final_filter,
        seed,
    })
}

fn resize_image(img: &SrgbImage, ow: usize, oh: usize, filter: ResizeFilter) -> Result<SrgbImage> {
    Ok(SrgbImage {
        r: resize_plane(&img.r, ow, oh, filter)?,
        g: resize_plane(&img.g, ow, oh, filter)?,
        b: resize_plane(&img.b, ow, oh, filter)?,
    })
}

/// Applies a resolved chain. The final resize restores the target LQ size
/// `even(hq_size * final_scale)`.
pub fn apply_resolved(hq: &SrgbImage, resolved: &ResolvedDegradation) -> Result<SrgbImage> {
    let target_w = even_target(hq.width(), resolved.final_scale);
    let target_h = even_target(hq.height(), resolved.final_scale);
    let mut img = hq.clone();
    for stage in &resolved.stages {
        match stage {
            ResolvedStage::Blur(spec) => {
                let k = make_kernel(spec)?;
                // Mid-chain resizes can shrink below the kernel; skip rather
                // than fail, the record still holds the sampled intent.
                if k.size() > img.width().min(img.height()) {
                    continue;
                }
                img = SrgbImage {
                    r: convolve_plane(&img.r, &k)?,
                    g: convolve_plane(&img.g, &k)?,
                    b: convolve_plane(&img.b, &k)?,
                };
            }
            ResolvedStage::Resize(spec) => {
                spec.validate()?;
                let floor_w = MIN_INTERMEDIATE.min(img.width() & !1);
                let floor_h = MIN_INTERMEDIATE.min(img.height() & !1);
                let ow = even_target(img.width(), spec.scale).max(floor_w);
                let oh = even_target(img.height(), spec.scale).max(floor_h);
                img = resize_image(&img, ow, oh, spec.filter)?;
            }
            ResolvedStage::Compress { quality } => {
                img = jpeg_simulate(&img, *quality)?;
            }
        }
    }
    if img.width() != target_w || img.height() != target_h {
        img = resize_image(&img, target_w, target_h, resolved.final_filter)?;
    }
    Ok(img)
}

/// Output of [`degrade_detail`]: the degraded image plus the resolved
/// parameters that produced it.
#[derive(Debug, Clone)]
pub struct DegradeOutput {
    pub image: SrgbImage,
    pub resolved: ResolvedDegradation,
}

/// Samples a degradation instance under `seed` and applies it.
pub fn degrade_detail(hq: &SrgbImage, cfg: &DegradationConfig, seed: u64) -> Result<DegradeOutput> {
    let resolved = resolve(cfg, seed)?;
    let image = apply_resolved(hq, &resolved)?;
    Ok(DegradeOutput { image, resolved })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::psnr;
    use crate::synthetic::band_limited_srgb;

    #[test]
    fn identity_chain_within_one_quant_step() {
        let img = band_limited_srgb(32, 32, 4, 0.1, 0.9);
        let out = degrade_detail(&img, &DegradationConfig::identity_pipeline(), 7).unwrap();
        assert_eq!(out.image.width(), 32);
        // Quality 100 tables are all ones: one 8-bit step. Coefficient
        // rounding through the block transform keeps the RMS inside one
        // step; isolated pixels can collect up to about twice that through
        // the chroma matrix.
        let step = 1.0 / 255.0;
        let mut sq = 0.0f64;
        let mut n = 0usize;
        for (o, i) in out.image.planes().iter().zip(img.planes()) {
            for (&a, &b) in o.data().iter().zip(i.data()) {
                let d = (a - b) as f64;
                assert!(d.abs() <= 2.0 * step, "pixel error {d}");
                sq += d * d;
                n += 1;
            }
        }
        let rmse = (sq / n as f64).sqrt();
        assert!(rmse <= step, "rmse {rmse} vs step {step}");
    }

    #[test]
    fn fixed_seed_is_bit_deterministic() {
        let img = band_limited_srgb(48, 32, 9, 0.05, 0.95);
        let cfg = DegradationConfig::default_pipeline();
        let a = degrade_detail(&img, &cfg, 1234).unwrap();
        let b = degrade_detail(&img, &cfg, 1234).unwrap();
        assert_eq!(a.resolved, b.resolved);
        assert_eq!(a.image, b.image);
        let pool1 = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let c = pool1.install(|| degrade_detail(&img, &cfg, 1234).unwrap());
        assert_eq!(a.image, c.image);
        let d = degrade_detail(&img, &cfg, 1235).unwrap();
        assert_ne!(a.resolved, d.resolved);
    }

    #[test]
    fn default_pipeline_measurably_degrades() {
        let cfg = DegradationConfig::default_pipeline();
        let mut total = 0.0;
        let n = 8;
        for seed in 0..n {
            let img = band_limited_srgb(64, 64, 100 + seed, 0.05, 0.95);
            let out = degrade_detail(&img, &cfg, seed).unwrap();
            total += psnr(&out.image, &img, 1.0).unwrap().db;
        }
        let mean = total / n as f64;
        assert!(mean < 35.0, "mean psnr {mean} too high for default pipeline");
    }

    #[test]
    fn noise_stage_rejected_with_specific_error() {
        let json = r#"{
            "stages": [
                {"kind": "noise", "sigma_range": [0.0, 0.1]},
                {"kind": "compress", "quality_range": [50, 90]}
            ]
        }"#;
        assert!(matches!(
            DegradationConfig::from_json(json),
            Err(Error::NoiseStageForbidden)
        ));
    }

    #[test]
    fn empty_stage_list_rejected() {
        let json = r#"{"stages": []}"#;
        assert!(DegradationConfig::from_json(json).is_err());
    }

    #[test]
    fn config_json_roundtrip() {
        let cfg = DegradationConfig::default_pipeline();
        let json = serde_json::to_string_pretty(&cfg).unwrap();
        let back = DegradationConfig::from_json(&json).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn second_order_doubles_stage_draws() {
        let mut cfg = DegradationConfig::default_pipeline();
        cfg.second_order = true;
        let two = resolve(&cfg, 5).unwrap();
        cfg.second_order = false;
        let one = resolve(&cfg, 5).unwrap();
        assert_eq!(two.stages.len(), 2 * one.stages.len());
        // Pass two re-samples: parameters differ from pass one.
        assert_ne!(two.stages[..one.stages.len()], two.stages[one.stages.len()..]);
    }

    #[test]
    fn final_scale_sets_output_dims() {
        let img = band_limited_srgb(64, 48, 2, 0.1, 0.9);
        let mut cfg = DegradationConfig::identity_pipeline();
        cfg.final_scale = 0.5;
        let out = degrade_detail(&img, &cfg, 0).unwrap();
        assert_eq!((out.image.width(), out.image.height()), (32, 24));
    }
}
