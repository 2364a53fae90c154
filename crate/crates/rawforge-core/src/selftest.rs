//! Embedded invariant suite behind the `selftest` CLI command.
//!
//! Each suite re-checks one family of pipeline invariants at its pinned
//! tolerance and reports a machine-readable result. All randomness derives
//! from the given seed, so the report is byte-deterministic.

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::cfa::{demosaic_bilinear, demosaic_malvar, mosaic, BayerPattern, CfaColor};
use crate::degrade::DegradationConfig;
use crate::image::LinearImage;
use crate::metrics::{
    dual_domain_mse, latent_scaling_factor, psnr, rescale_latents, ssim, LatentBatch, LossWeights,
};
use crate::noise::{add_shot_read_noise_preclamp, estimate_noise_curve, NoiseParams};
use crate::ptp::{
    forward_unclipped, ptp_forward_pixel, ptp_inverse_pixel, ptp_jvp_pixel, tone_map, tone_unmap,
    GammaCurve, PixelJet, PtpParams, ToneCurve, FD_SAFE_MARGIN,
};
use crate::rng::DetRng;
use crate::synth::{feed_forward_isp, sample_ptp_params, synthesize_pair, NoiseSetting, PtpSampling, SynthesisConfig};
use crate::synthetic::{band_limited_image, band_limited_srgb};

/// Result of one invariant suite.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuiteResult {
    pub suite: String,
    pub passed: bool,
    /// Measured values and the tolerances they were held to.
    pub detail: serde_json::Value,
}

/// Full selftest report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub seed: u64,
    pub passed: usize,
    pub failed: usize,
    pub suites: Vec<SuiteResult>,
}

impl Report {
    pub fn all_passed(&self) -> bool {
        self.failed == 0
    }
}

fn sample_unclipped_params(rng: &mut DetRng) -> PtpParams {
    let sampling = PtpSampling {
        gain_range: [0.8, 1.25],
        ..PtpSampling::default()
    };
    sample_ptp_params(rng, &sampling).expect("sampling defaults are valid")
}

fn suite_ptp_roundtrip(seed: u64) -> SuiteResult {
    let mut rng = DetRng::new(seed);
    let mut max_err = 0.0f64;
    for _ in 0..20 {
        let p = sample_unclipped_params(&mut rng);
        let mut n = 0;
        while n < 500 {
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
                max_err = max_err.max((back[c] - rgb[c]).abs());
            }
            n += 1;
        }
    }
    SuiteResult {
        suite: "ptp_roundtrip".into(),
        passed: max_err < 1e-4,
        detail: json!({"max_abs_err": max_err, "tolerance": 1e-4, "pixels": 10_000}),
    }
}

fn suite_gradcheck(seed: u64) -> (SuiteResult, f64) {
    let mut rng = DetRng::new(seed);
    let mut max_rel = 0.0f64;
    let mut pixels = 0usize;
    let curves = [GammaCurve::SrgbStandard, GammaCurve::Power(2.2)];
    let tones = [ToneCurve::Smoothstep, ToneCurve::Identity];
    for &gamma in &curves {
        for &tone in &tones {
            let base = sample_unclipped_params(&mut rng);
            let p = PtpParams::new(base.wb_gains(), base.ccm(), gamma, tone).expect("valid");
            let mut n = 0;
            while n < 300 {
                let v = [
                    rng.uniform(0.05, 0.95),
                    rng.uniform(0.05, 0.95),
                    rng.uniform(0.05, 0.95),
                ];
                if !forward_unclipped(&p, v, FD_SAFE_MARGIN) {
                    continue;
                }
                let t = [
                    rng.uniform(-1.0, 1.0),
                    rng.uniform(-1.0, 1.0),
                    rng.uniform(-1.0, 1.0),
                ];
                let (jet, _) = ptp_jvp_pixel(&p, PixelJet { value: v, tangent: t });
                let h = 1e-4;
                let plus = ptp_forward_pixel(&p, [v[0] + h * t[0], v[1] + h * t[1], v[2] + h * t[2]]);
                let minus = ptp_forward_pixel(&p, [v[0] - h * t[0], v[1] - h * t[1], v[2] - h * t[2]]);
                let mut scale = 1e-6f64;
                for c in 0..3 {
                    scale = scale.max(jet.tangent[c].abs());
                }
                for c in 0..3 {
                    let fd = (plus[c] - minus[c]) / (2.0 * h);
                    max_rel = max_rel.max((fd - jet.tangent[c]).abs() / scale);
                }
                n += 1;
                pixels += 1;
            }
        }
    }
    let result = SuiteResult {
        suite: "ptp_gradcheck".into(),
        passed: max_rel < 1e-3,
        detail: json!({"max_rel_err": max_rel, "tolerance": 1e-3, "pixels": pixels}),
    };
    (result, max_rel)
}

fn suite_tone_inversion() -> SuiteResult {
    let mut max_err = 0.0f64;
    for i in 0..=10_000 {
        let y = i as f64 / 10_000.0;
        let x = tone_unmap(ToneCurve::Smoothstep, y);
        max_err = max_err.max((tone_map(ToneCurve::Smoothstep, x) - y).abs());
    }
    SuiteResult {
        suite: "tone_inversion".into(),
        passed: max_err < 1e-6,
        detail: json!({"max_abs_err": max_err, "tolerance": 1e-6, "grid": 10_001}),
    }
}

fn suite_cfa(seed: u64) -> SuiteResult {
    let mut ok = true;
    // Quad layouts on a crafted constant image.
    let img = LinearImage::filled(2, 2, [0.1, 0.2, 0.3]);
    let expect: [(BayerPattern, [f32; 4]); 4] = [
        (BayerPattern::Rggb, [0.1, 0.2, 0.2, 0.3]),
        (BayerPattern::Bggr, [0.3, 0.2, 0.2, 0.1]),
        (BayerPattern::Grbg, [0.2, 0.1, 0.3, 0.2]),
        (BayerPattern::Gbrg, [0.2, 0.3, 0.1, 0.2]),
    ];
    for (pattern, quad) in expect {
        let raw = mosaic(&img, pattern).expect("even dims");
        ok &= raw.plane.data() == quad;
    }
    // Pass-through at sampled sites and demosaic quality.
    let scene = band_limited_image(96, 64, seed, 0.05, 0.95);
    let mut bilinear_db = 0.0;
    let mut malvar_db = 0.0;
    for pattern in BayerPattern::ALL {
        let raw = mosaic(&scene, pattern).expect("even dims");
        let bl = demosaic_bilinear(&raw);
        let mh = demosaic_malvar(&raw).expect("large enough");
        for (x, y) in [(0usize, 0usize), (31, 17), (50, 33)] {
            let got = match pattern.color_at(x, y) {
                CfaColor::R => bl.r.get(x, y),
                CfaColor::G => bl.g.get(x, y),
                CfaColor::B => bl.b.get(x, y),
            };
            ok &= got == raw.plane.get(x, y);
        }
        bilinear_db += psnr(&bl, &scene, 1.0).expect("same dims").db / 4.0;
        malvar_db += psnr(&mh, &scene, 1.0).expect("same dims").db / 4.0;
    }
    ok &= bilinear_db >= 30.0 && malvar_db >= bilinear_db;
    SuiteResult {
        suite: "cfa".into(),
        passed: ok,
        detail: json!({
            "bilinear_psnr_db": bilinear_db,
            "malvar_psnr_db": malvar_db,
            "bilinear_min_db": 30.0
        }),
    }
}

fn suite_noise_law(seed: u64) -> SuiteResult {
    use crate::image::{CaptureMetadata, ImagePlane, RawImage};
    let plate = RawImage::new(
        ImagePlane::filled(1000, 1000, 0.5),
        CaptureMetadata::neutral(BayerPattern::Rggb),
    )
    .expect("even dims");
    let p = NoiseParams { shot: 0.01, read: 0.001 };
    let noisy = add_shot_read_noise_preclamp(&plate, p, seed).expect("valid params");
    let n = noisy.plane.data().len() as f64;
    let mean = noisy.plane.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = noisy
        .plane
        .data()
        .iter()
        .map(|&v| (v as f64 - mean).powi(2))
        .sum::<f64>()
        / n;
    let var_ok = (var - 0.006).abs() / 0.006 < 0.05;

    let ramp = RawImage::new(
        ImagePlane::from_fn(512, 512, |x, _| x as f32 / 511.0),
        CaptureMetadata::neutral(BayerPattern::Rggb),
    )
    .expect("even dims");
    let noisy_ramp = add_shot_read_noise_preclamp(&ramp, p, seed ^ 1).expect("valid params");
    let (shot_hat, read_hat) = estimate_noise_curve(&noisy_ramp, &ramp).expect("dense bins");
    let est_ok =
        (shot_hat - p.shot).abs() / p.shot < 0.10 && (read_hat - p.read).abs() / p.read < 0.10;
    SuiteResult {
        suite: "noise_law".into(),
        passed: var_ok && est_ok,
        detail: json!({
            "plate_variance": var,
            "expected_variance": 0.006,
            "variance_tolerance": 0.05,
            "shot_hat": shot_hat,
            "read_hat": read_hat,
            "estimate_tolerance": 0.10
        }),
    }
}

fn suite_scaling_factor(seed: u64) -> SuiteResult {
    let mut rng = DetRng::new(seed);
    let data: Vec<f32> = (0..1_000_000).map(|_| rng.normal() as f32).collect();
    let z = LatentBatch::new(1, 4, 500, 500, data).expect("shape");
    let (_, sigma) = latent_scaling_factor(&z).expect("size");
    let sigma_ok = (0.995..=1.005).contains(&sigma);
    let rescaled = rescale_latents(&z, sigma).expect("positive sigma");
    let (_, post) = latent_scaling_factor(&rescaled).expect("size");
    let post_ok = (post - 1.0).abs() < 1e-6;
    let constant = LatentBatch::new(1, 1, 2, 2, vec![5.0; 4]).expect("shape");
    let (_, zero_sigma) = latent_scaling_factor(&constant).expect("size");
    let degenerate_ok = rescale_latents(&constant, zero_sigma).is_err();
    SuiteResult {
        suite: "scaling_factor".into(),
        passed: sigma_ok && post_ok && degenerate_ok,
        detail: json!({
            "sigma": sigma,
            "sigma_window": [0.995, 1.005],
            "post_rescale_sigma": post,
            "post_tolerance": 1e-6,
            "degenerate_rejected": degenerate_ok
        }),
    }
}

fn suite_metrics(seed: u64) -> SuiteResult {
    let a = LinearImage::filled(16, 16, [0.25; 3]);
    let b = LinearImage::filled(16, 16, [0.35; 3]);
    let p20 = psnr(&a, &b, 1.0).expect("same dims").db;
    let c = LinearImage::filled(16, 16, [0.26; 3]);
    let p40 = psnr(&a, &c, 1.0).expect("same dims").db;
    let img = band_limited_image(24, 24, seed, 0.1, 0.9);
    let self_ssim = ssim(&img, &img).expect("large enough");
    let ok = (p20 - 20.0).abs() < 1e-4 && (p40 - 40.0).abs() < 1e-4 && self_ssim == 1.0;
    SuiteResult {
        suite: "metrics_oracle".into(),
        passed: ok,
        detail: json!({
            "psnr_offset_0p1_db": p20,
            "psnr_offset_0p01_db": p40,
            "psnr_tolerance_db": 1e-4,
            "ssim_self": self_ssim
        }),
    }
}

fn suite_loss(seed: u64) -> SuiteResult {
    let pred = band_limited_image(8, 8, seed, 0.25, 0.75);
    let gt = band_limited_image(8, 8, seed ^ 7, 0.25, 0.75);
    let mut rng = DetRng::new(seed ^ 13);
    let p = sample_unclipped_params(&mut rng);
    let w = LossWeights::default();
    let zero = dual_domain_mse(&gt, &gt, &p, w).expect("same dims");
    let base = dual_domain_mse(&pred, &gt, &p, w).expect("same dims");
    let h = 1e-4;
    let mut max_rel = 0.0f64;
    for _ in 0..30 {
        let x = rng.below(8) as usize;
        let y = rng.below(8) as usize;
        let c = rng.below(3) as usize;
        let perturb = |delta: f64| {
            let mut planes = [pred.r.clone(), pred.g.clone(), pred.b.clone()];
            let mut data = planes[c].data().to_vec();
            data[y * 8 + x] = (data[y * 8 + x] as f64 + delta) as f32;
            planes[c] = crate::image::ImagePlane::from_vec(8, 8, data).expect("shape");
            let [r, g, b] = planes;
            LinearImage { r, g, b }
        };
        let lp = dual_domain_mse(&perturb(h), &gt, &p, w).expect("same dims").loss;
        let lm = dual_domain_mse(&perturb(-h), &gt, &p, w).expect("same dims").loss;
        let fd = (lp - lm) / (2.0 * h);
        let an = base.gradient.pixel(x, y)[c] as f64;
        let denom = an.abs().max(fd.abs()).max(1e-9);
        max_rel = max_rel.max((fd - an).abs() / denom);
    }
    SuiteResult {
        suite: "dual_domain_loss".into(),
        passed: zero.loss == 0.0 && base.loss > 0.0 && max_rel < 1e-3,
        detail: json!({
            "loss_at_truth": zero.loss,
            "gradcheck_max_rel_err": max_rel,
            "tolerance": 1e-3
        }),
    }
}

fn suite_determinism(seed: u64) -> SuiteResult {
    let hq = band_limited_srgb(48, 48, seed, 0.1, 0.7);
    let cfg = SynthesisConfig::default();
    let a = synthesize_pair(&hq, &cfg, BayerPattern::Rggb, seed).expect("even dims");
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(8)
        .build()
        .expect("pool");
    let b = pool.install(|| synthesize_pair(&hq, &cfg, BayerPattern::Rggb, seed).expect("even dims"));
    let pair_ok = a.raw_lq.plane == b.raw_lq.plane && a.linear_hq == b.linear_hq;

    let zero_cfg = SynthesisConfig {
        degradation: DegradationConfig::identity_pipeline(),
        noise: NoiseSetting::Fixed(NoiseParams::ZERO),
        ptp: PtpSampling::default(),
    };
    let clean = synthesize_pair(&hq, &zero_cfg, BayerPattern::Rggb, seed).expect("even dims");
    let preview = feed_forward_isp(&clean.raw_lq, false).expect("metadata present");
    let db = psnr(&preview, &hq, 1.0).expect("same dims").db;
    SuiteResult {
        suite: "determinism_and_full_chain".into(),
        passed: pair_ok && db >= 30.0,
        detail: json!({
            "thread_invariant": pair_ok,
            "clean_chain_psnr_db": db,
            "clean_chain_min_db": 30.0
        }),
    }
}

/// Runs every suite under the given seed.
pub fn run(seed: u64) -> Report {
    let (grad, _) = suite_gradcheck(seed ^ 0x9E37);
    let suites = vec![
        suite_ptp_roundtrip(seed),
        grad,
        suite_tone_inversion(),
        suite_cfa(seed ^ 0xC0FFEE),
        suite_noise_law(seed ^ 0xBEEF),
        suite_scaling_factor(seed ^ 0xFACE),
        suite_metrics(seed ^ 0xD00D),
        suite_loss(seed ^ 0xA11CE),
        suite_determinism(seed ^ 0x5EED),
    ];
    let passed = suites.iter().filter(|s| s.passed).count();
    Report {
        seed,
        passed,
        failed: suites.len() - passed,
        suites,
    }
}
