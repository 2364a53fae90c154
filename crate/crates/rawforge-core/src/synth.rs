//! End-to-end dataset synthesis: degraded RAW / clean linear training pairs
//! from display-referred sources, plus the feed-forward preview ISP.
//!
//! The LQ path runs detail degradation in the display domain, inverts the
//! tone chain, mosaics, and injects sensor noise; the GT path inverts the
//! same sampled tone chain directly. Sharing parameters between the paths
//! means the pair differs only by degradation, mosaic, and noise.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cfa::{demosaic_malvar, denoise_raw_gaussian, mosaic, BayerPattern};
use crate::degrade::{degrade_detail, DegradationConfig, ResolvedDegradation};
use crate::error::{Error, Result};
use crate::image::{
    load_srgb, save_linear, save_raw, save_srgb, sidecar_path, write_atomic, BitDepth,
    CaptureMetadata, LinearImage, RawImage, SrgbImage,
};
use crate::noise::{add_shot_read_noise, sample_noise_params, NoiseParams, NoiseRanges};
use crate::ptp::{ptp_forward, ptp_inverse, GammaCurve, PtpParams, ToneCurve};
use crate::rng::{record_seed, DetRng};

/// Version string recorded in manifests and sidecars.
pub const PIPELINE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Fixed plausible camera-to-display matrix used as the blend target when
/// sampling CCMs; rows sum to 1.
pub const CAMERA_CCM: [f64; 9] = [1.66, -0.55, -0.11, -0.18, 1.42, -0.24, 0.02, -0.51, 1.49];

/// Sampling policy for tone-chain parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PtpSampling {
    /// Log-uniform range for the red and blue gains; green is fixed at 1.
    pub gain_range: [f64; 2],
    /// Uniform range of the identity-to-camera CCM blend weight.
    pub ccm_blend_range: [f64; 2],
    pub gamma: GammaCurve,
    pub tone: ToneCurve,
}

impl Default for PtpSampling {
    fn default() -> Self {
        Self {
            gain_range: [1.0 / 1.4, 1.4],
            ccm_blend_range: [0.0, 1.0],
            gamma: GammaCurve::SrgbStandard,
            tone: ToneCurve::Smoothstep,
        }
    }
}

/// Draws tone-chain parameters: gains log-uniform, CCM a renormalized convex
/// blend of identity and [`CAMERA_CCM`].
pub fn sample_ptp_params(rng: &mut DetRng, s: &PtpSampling) -> Result<PtpParams> {
    if !s.gain_range.iter().all(|g| g.is_finite()) || s.gain_range[0] <= 0.0 || s.gain_range[0] > s.gain_range[1] {
        return Err(Error::InvalidArgument("bad gain range".into()));
    }
    let g_r = rng.log_uniform(s.gain_range[0], s.gain_range[1]);
    let g_b = rng.log_uniform(s.gain_range[0], s.gain_range[1]);
    let w = rng.uniform(s.ccm_blend_range[0], s.ccm_blend_range[1]);
    let ident = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    let mut ccm = [0.0f64; 9];
    for i in 0..9 {
        ccm[i] = (1.0 - w) * ident[i] + w * CAMERA_CCM[i];
    }
    for row in 0..3 {
        let sum: f64 = ccm[3 * row..3 * row + 3].iter().sum();
        for v in &mut ccm[3 * row..3 * row + 3] {
            *v /= sum;
        }
    }
    PtpParams::new([g_r, 1.0, g_b], ccm, s.gamma, s.tone)
}

/// Noise configuration: sampled per record, or fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum NoiseSetting {
    Ranges(NoiseRanges),
    Fixed(NoiseParams),
}

impl Default for NoiseSetting {
    fn default() -> Self {
        NoiseSetting::Ranges(NoiseRanges::default())
    }
}

/// Everything needed to synthesize one record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisConfig {
    pub degradation: DegradationConfig,
    #[serde(default)]
    pub noise: NoiseSetting,
    #[serde(default)]
    pub ptp: PtpSampling,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            degradation: DegradationConfig::default_pipeline(),
            noise: NoiseSetting::default(),
            ptp: PtpSampling::default(),
        }
    }
}

impl SynthesisConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        // Route through the degradation parser for the noise-stage refusal.
        let value: serde_json::Value = serde_json::from_str(text).map_err(|source| Error::Json {
            path: "<config>".into(),
            source,
        })?;
        if let Some(deg) = value.get("degradation") {
            DegradationConfig::from_json(&deg.to_string())?;
        }
        serde_json::from_value(value).map_err(|source| Error::Json {
            path: "<config>".into(),
            source,
        })
    }
}

fn metadata_for(
    ptp: &PtpParams,
    pattern: BayerPattern,
    noise: NoiseParams,
    seed: u64,
) -> CaptureMetadata {
    CaptureMetadata {
        pattern,
        wb_gains: ptp.wb_gains(),
        ccm: ptp.ccm(),
        shot: noise.shot,
        read: noise.read,
        seed,
        gamma: (ptp.gamma() != GammaCurve::SrgbStandard).then_some(ptp.gamma()),
        tone: (ptp.tone() != ToneCurve::Smoothstep).then_some(ptp.tone()),
        pre_clip: false,
    }
}

/// Tone-chain parameters recorded in a RAW sidecar.
pub fn params_from_metadata(meta: &CaptureMetadata) -> Result<PtpParams> {
    PtpParams::new(
        meta.wb_gains,
        meta.ccm,
        meta.gamma.unwrap_or(GammaCurve::SrgbStandard),
        meta.tone.unwrap_or(ToneCurve::Smoothstep),
    )
}

/// Mosaic noise synthesis: mosaic then shot/read noise injection.
pub fn mns(x: &LinearImage, pattern: BayerPattern, p: NoiseParams, seed: u64) -> Result<RawImage> {
    let raw = mosaic(x, pattern)?;
    add_shot_read_noise(&raw, p, seed)
}

/// One synthesized LQ/GT pair with every sampled parameter pinned.
#[derive(Debug, Clone)]
pub struct SynthesizedPair {
    pub raw_lq: RawImage,
    pub linear_hq: LinearImage,
    pub ptp: PtpParams,
    pub noise: NoiseParams,
    pub degradation: ResolvedDegradation,
}

/// Synthesizes a degraded-RAW / clean-linear pair from one source image.
///
/// Both paths share the same sampled tone-chain parameters. Seed streams are
/// derived per concern, so the pair is a pure function of `(hq, cfg, seed)`.
pub fn synthesize_pair(
    hq: &SrgbImage,
    cfg: &SynthesisConfig,
    pattern: BayerPattern,
    seed: u64,
) -> Result<SynthesizedPair> {
    if !hq.width().is_multiple_of(2) || !hq.height().is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "synthesis needs even source dimensions, got {}x{}",
            hq.width(),
            hq.height()
        )));
    }
    let root = DetRng::new(seed);
    let ptp = sample_ptp_params(&mut DetRng::new(root.derive(0)), &cfg.ptp)?;
    let noise = match &cfg.noise {
        NoiseSetting::Fixed(p) => {
            p.validate()?;
            *p
        }
        NoiseSetting::Ranges(r) => sample_noise_params(&mut DetRng::new(root.derive(1)), r)?,
    };

    let degraded = degrade_detail(hq, &cfg.degradation, root.derive(2))?;
    let lq_linear = ptp_inverse(&degraded.image, &ptp);
    let noise_seed = root.derive(3);
    let mut raw_lq = mns(&lq_linear, pattern, noise, noise_seed)?;
    raw_lq.meta = metadata_for(&ptp, pattern, noise, noise_seed);

    let linear_hq = ptp_inverse(hq, &ptp);
    Ok(SynthesizedPair {
        raw_lq,
        linear_hq,
        ptp,
        noise,
        degradation: degraded.resolved,
    })
}

/// Detail pair for denoise/demosaic training: clean linear GT and its
/// noisy mosaic, with no display-domain degradation.
#[derive(Debug, Clone)]
pub struct DetailPair {
    pub raw_detail: RawImage,
    pub linear_hq: LinearImage,
    pub ptp: PtpParams,
    pub noise: NoiseParams,
}

/// Synthesizes an `(X_raw, X_linear)` detail pair: inverse tone chain, then
/// mosaic + noise on the same clean linear image.
pub fn synthesize_ddnet_pair(
    hq: &SrgbImage,
    cfg: &SynthesisConfig,
    pattern: BayerPattern,
    seed: u64,
) -> Result<DetailPair> {
    if !hq.width().is_multiple_of(2) || !hq.height().is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "synthesis needs even source dimensions, got {}x{}",
            hq.width(),
            hq.height()
        )));
    }
    let root = DetRng::new(seed);
    let ptp = sample_ptp_params(&mut DetRng::new(root.derive(0)), &cfg.ptp)?;
    let noise = match &cfg.noise {
        NoiseSetting::Fixed(p) => {
            p.validate()?;
            *p
        }
        NoiseSetting::Ranges(r) => sample_noise_params(&mut DetRng::new(root.derive(1)), r)?,
    };
    let linear_hq = ptp_inverse(hq, &ptp);
    let noise_seed = root.derive(3);
    let mut raw_detail = mns(&linear_hq, pattern, noise, noise_seed)?;
    raw_detail.meta = metadata_for(&ptp, pattern, noise, noise_seed);
    Ok(DetailPair {
        raw_detail,
        linear_hq,
        ptp,
        noise,
    })
}

/// Preview ISP: optional mosaic-domain denoise, gradient-corrected demosaic,
/// then the forward tone chain using the frame's own sidecar parameters.
pub fn feed_forward_isp(raw: &RawImage, prefilter: bool) -> Result<SrgbImage> {
    raw.meta.validate()?;
    let params = params_from_metadata(&raw.meta)?;
    let frame = if prefilter {
        denoise_raw_gaussian(raw)
    } else {
        raw.clone()
    };
    let linear = demosaic_malvar(&frame)?;
    Ok(ptp_forward(&linear, &params))
}

// ---------------------------------------------------------------------------
// corpus synthesis
// ---------------------------------------------------------------------------

/// Bayer pattern assignment across a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternPolicy {
    /// Cycle through all four patterns by record index.
    RoundRobin,
    Fixed(BayerPattern),
}

impl PatternPolicy {
    pub fn pattern_for(self, index: usize) -> BayerPattern {
        match self {
            PatternPolicy::RoundRobin => BayerPattern::ALL[index % 4],
            PatternPolicy::Fixed(p) => p,
        }
    }
}

/// Corpus-level synthesis options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub synthesis: SynthesisConfig,
    pub master_seed: u64,
    #[serde(default = "default_policy")]
    pub pattern_policy: PatternPolicy,
    /// Emit detail pairs (no display-domain degradation) instead.
    #[serde(default)]
    pub ddnet_pairs: bool,
}

fn default_policy() -> PatternPolicy {
    PatternPolicy::RoundRobin
}

/// One completed record of a synthesis run. Paths are relative to the
/// output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisRecord {
    pub index: usize,
    pub source: String,
    pub raw_lq_path: String,
    pub linear_hq_path: String,
    pub srgb_hq_path: String,
    pub pattern: BayerPattern,
    pub seed: u64,
    pub meta: CaptureMetadata,
    /// Resolved degradation; absent for detail pairs.
    pub degradation: Option<ResolvedDegradation>,
    pub content_hash: String,
    pub pipeline_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFailure {
    pub source: String,
    pub error: String,
}

/// Inventory of a synthesis run, written as `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub pipeline_version: String,
    pub master_seed: u64,
    pub source_dataset: String,
    pub records: Vec<SynthesisRecord>,
    pub failures: Vec<ManifestFailure>,
}

/// Hex SHA-256 over `(record seed, config, source bytes)`; identifies a
/// completed record for resume.
fn content_hash(seed: u64, cfg_json: &str, source_bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(cfg_json.as_bytes());
    hasher.update(source_bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn list_sources(src_dir: &Path) -> Result<Vec<PathBuf>> {
    let io_err = |source| Error::Io {
        path: src_dir.to_path_buf(),
        source,
    };
    let mut paths: Vec<PathBuf> = fs::read_dir(src_dir)
        .map_err(io_err)?
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(io_err)?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| {
            p.extension()
                .is_some_and(|e| e.eq_ignore_ascii_case("png") || e.eq_ignore_ascii_case("rfim"))
        })
        .collect();
    paths.sort();
    Ok(paths)
}

fn even_crop(img: SrgbImage) -> Result<SrgbImage> {
    let (w, h) = (img.width() & !1, img.height() & !1);
    if w == 0 || h == 0 {
        return Err(Error::InvalidArgument("source image smaller than 2x2".into()));
    }
    if (w, h) == (img.width(), img.height()) {
        Ok(img)
    } else {
        img.crop(0, 0, w, h)
    }
}

fn synthesize_record(
    src: &Path,
    out_dir: &Path,
    index: usize,
    cfg: &RunConfig,
    cfg_json: &str,
    previous: Option<&SynthesisRecord>,
) -> Result<SynthesisRecord> {
    let source_name = src
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let stem = src
        .file_stem()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| format!("record{index}"));
    let seed = record_seed(cfg.master_seed, index as u64);
    let bytes = fs::read(src).map_err(|source| Error::Io {
        path: src.to_path_buf(),
        source,
    })?;
    let hash = content_hash(seed, cfg_json, &bytes);

    let raw_rel = format!("{stem}_raw_lq.png");
    let linear_rel = format!("{stem}_linear_hq.png");
    let srgb_rel = format!("{stem}_srgb_hq.png");

    // Resume: a record whose hash matches and whose outputs all exist is
    // reused verbatim.
    if let Some(prev) = previous {
        let outputs_exist = [&prev.raw_lq_path, &prev.linear_hq_path, &prev.srgb_hq_path]
            .iter()
            .all(|rel| out_dir.join(rel).exists())
            && sidecar_path(&out_dir.join(&prev.raw_lq_path)).exists();
        if prev.content_hash == hash && outputs_exist {
            return Ok(prev.clone());
        }
    }

    let hq = even_crop(load_srgb(src)?)?;
    let pattern = cfg.pattern_policy.pattern_for(index);
    let depth = BitDepth::Sixteen;

    let (raw, linear, meta, degradation) = if cfg.ddnet_pairs {
        let pair = synthesize_ddnet_pair(&hq, &cfg.synthesis, pattern, seed)?;
        let meta = pair.raw_detail.meta.clone();
        (pair.raw_detail, pair.linear_hq, meta, None)
    } else {
        let pair = synthesize_pair(&hq, &cfg.synthesis, pattern, seed)?;
        let meta = pair.raw_lq.meta.clone();
        (pair.raw_lq, pair.linear_hq, meta, Some(pair.degradation))
    };

    save_raw(&raw, &out_dir.join(&raw_rel), depth)?;
    save_linear(&linear, &out_dir.join(&linear_rel), depth)?;
    save_srgb(&hq, &out_dir.join(&srgb_rel), depth)?;

    Ok(SynthesisRecord {
        index,
        source: source_name,
        raw_lq_path: raw_rel,
        linear_hq_path: linear_rel,
        srgb_hq_path: srgb_rel,
        pattern,
        seed,
        meta,
        degradation,
        content_hash: hash,
        pipeline_version: PIPELINE_VERSION.to_string(),
    })
}

/// Synthesizes a training corpus: one record per source image, resumable by
/// content hash, records processed in parallel with per-record seeds.
pub fn run_manifest(src_dir: &Path, out_dir: &Path, cfg: &RunConfig) -> Result<Manifest> {
    fs::create_dir_all(out_dir).map_err(|source| Error::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let sources = list_sources(src_dir)?;
    let cfg_json = serde_json::to_string(cfg).expect("config serializes");

    // Per-record seeds must never collide inside one manifest.
    {
        let mut seen = std::collections::HashSet::new();
        for i in 0..sources.len() {
            if !seen.insert(record_seed(cfg.master_seed, i as u64)) {
                return Err(Error::InvalidArgument(
                    "record seed collision; change the master seed".into(),
                ));
            }
        }
    }

    let manifest_path = out_dir.join("manifest.json");
    let previous: HashMap<String, SynthesisRecord> = fs::read(&manifest_path)
        .ok()
        .and_then(|bytes| serde_json::from_slice::<Manifest>(&bytes).ok())
        .map(|m| {
            m.records
                .into_iter()
                .map(|r| (r.source.clone(), r))
                .collect()
        })
        .unwrap_or_default();

    let outcomes: Vec<(usize, std::result::Result<SynthesisRecord, String>)> = sources
        .par_iter()
        .enumerate()
        .map(|(index, src)| {
            let prev = src
                .file_name()
                .and_then(|n| previous.get(&n.to_string_lossy().into_owned()));
            let outcome = synthesize_record(src, out_dir, index, cfg, &cfg_json, prev)
                .map_err(|e| e.to_string());
            (index, outcome)
        })
        .collect();

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (index, outcome) in outcomes {
        match outcome {
            Ok(rec) => records.push(rec),
            Err(error) => {
                let source = sources[index]
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default();
                log::warn!("record {index} ({source}) failed: {error}");
                failures.push(ManifestFailure { source, error });
            }
        }
    }

    let manifest = Manifest {
        pipeline_version: PIPELINE_VERSION.to_string(),
        master_seed: cfg.master_seed,
        source_dataset: src_dir.display().to_string(),
        records,
        failures,
    };
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    write_atomic(&manifest_path, &json)?;
    Ok(manifest)
}
