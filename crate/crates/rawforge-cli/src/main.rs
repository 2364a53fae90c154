//! `rawforge`: command-line interface to the RAW-domain processing pipeline.
//!
//! One subcommand per pipeline stage plus the orchestrated synthesis and
//! evaluation flows. Machine output is JSON on stdout; human summaries go to
//! stderr. Exit codes: 0 success, 1 validation error, 2 IO error,
//! 3 acceptance-check failure (`gradcheck` / `selftest`).

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use rawforge_core::cfa::{
    demosaic_bilinear, demosaic_malvar, denoise_raw_gaussian, mosaic, BayerPattern,
};
use rawforge_core::degrade::{degrade_detail, DegradationConfig};
use rawforge_core::image::{
    decode_rfim, load_image, load_linear, load_plane, load_raw, load_srgb, save_linear, save_raw,
    save_rfim, save_srgb, sidecar_path, write_atomic, BitDepth, CaptureMetadata, DomainHint,
    ImagePlane, LinearImage, LoadedImage, RawImage, SrgbImage,
};
use rawforge_core::metrics::{
    latent_scaling_factor, luma_plane, psnr, ssim, ssim_plane, LatentBatch,
};
use rawforge_core::noise::{
    add_shot_read_noise, add_shot_read_noise_preclamp, estimate_noise_curve, NoiseParams,
};
use rawforge_core::ptp::{
    forward_unclipped, ptp_forward, ptp_forward_pixel, ptp_inverse, ptp_jvp_pixel, GammaCurve,
    PixelJet, PtpParams, ToneCurve, FD_SAFE_MARGIN,
};
use rawforge_core::rng::DetRng;
use rawforge_core::selftest;
use rawforge_core::synth::{
    feed_forward_isp, params_from_metadata, run_manifest, sample_ptp_params, PatternPolicy,
    PtpSampling, RunConfig, SynthesisConfig,
};
use rawforge_core::Error;

const EXIT_OK: i32 = 0;
const EXIT_VALIDATION: i32 = 1;
const EXIT_IO: i32 = 2;
const EXIT_CHECK_FAILED: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LogLevel {
    Quiet,
    Info,
    Debug,
}

#[derive(Debug, Parser)]
#[command(
    name = "rawforge",
    version,
    about = "Deterministic RAW-domain image processing pipeline"
)]
struct Cli {
    /// Master seed for all sampled parameters.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads (defaults to RAWFORGE_THREADS or all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[arg(long, global = true, value_enum, default_value_t = LogLevel::Info)]
    log_level: LogLevel,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PatternArg {
    Rggb,
    Bggr,
    Grbg,
    Gbrg,
}

impl From<PatternArg> for BayerPattern {
    fn from(p: PatternArg) -> Self {
        match p {
            PatternArg::Rggb => BayerPattern::Rggb,
            PatternArg::Bggr => BayerPattern::Bggr,
            PatternArg::Grbg => BayerPattern::Grbg,
            PatternArg::Gbrg => BayerPattern::Gbrg,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DemosaicMethod {
    Bilinear,
    Malvar,
}

#[derive(Debug, Args)]
struct IoArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Output quantization depth for PNG (8 or 16).
    #[arg(long, default_value_t = 16)]
    bitdepth: u32,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Dataset synthesis flows.
    Synth {
        #[command(subcommand)]
        action: SynthAction,
    },
    /// Detail degradation of a display-referred image.
    Degrade {
        #[command(flatten)]
        io: IoArgs,
        /// Degradation config JSON; built-in default pipeline if omitted.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Forward / inverse tone processing.
    Isp {
        #[command(subcommand)]
        action: IspAction,
    },
    /// Sample one channel per site according to a Bayer pattern.
    Mosaic {
        #[command(flatten)]
        io: IoArgs,
        #[arg(long, value_enum)]
        pattern: PatternArg,
    },
    /// Reconstruct three channels from a mosaiced frame.
    Demosaic {
        #[command(flatten)]
        io: IoArgs,
        #[arg(long, value_enum, default_value_t = DemosaicMethod::Malvar)]
        method: DemosaicMethod,
        /// Apply the per-phase Gaussian denoise before interpolation.
        #[arg(long)]
        prefilter: bool,
    },
    /// Sensor noise injection and estimation.
    Noise {
        #[command(subcommand)]
        action: NoiseAction,
    },
    /// Fidelity metrics between a ground truth and a prediction.
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        /// Compute on the BT.601 luma plane instead of 3 channels.
        #[arg(long)]
        luma: bool,
    },
    /// Statistics commands.
    Stats {
        #[command(subcommand)]
        action: StatsAction,
    },
    /// Analytic derivatives against central finite differences.
    Gradcheck {
        /// Interior pixels per curve/tone combination.
        #[arg(long, default_value_t = 500)]
        pixels: usize,
    },
    /// Run the embedded invariant suite.
    Selftest,
}

#[derive(Debug, Subcommand)]
enum SynthAction {
    /// Synthesize a training corpus from a directory of sRGB sources.
    Run {
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Synthesis config JSON; defaults are used if omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Fix one Bayer pattern instead of cycling through all four.
        #[arg(long, value_enum)]
        pattern: Option<PatternArg>,
        /// Cycle patterns by record index (default when --pattern is absent).
        #[arg(long, conflicts_with = "pattern")]
        round_robin: bool,
        /// Emit detail pairs (no display-domain degradation).
        #[arg(long)]
        ddnet_pairs: bool,
    },
}

#[derive(Debug, Subcommand)]
enum IspAction {
    /// Linear -> display-referred (or RAW -> preview via the full ISP).
    Forward {
        #[command(flatten)]
        io: IoArgs,
        /// Metadata sidecar; defaults to `<input stem>.meta.json`.
        #[arg(long)]
        meta: Option<PathBuf>,
        /// Apply the mosaic-domain denoise in the RAW preview path.
        #[arg(long)]
        prefilter: bool,
    },
    /// Display-referred -> linear.
    Invert {
        #[command(flatten)]
        io: IoArgs,
        #[arg(long)]
        meta: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
enum NoiseAction {
    /// Add heteroscedastic shot/read noise to a RAW frame.
    Add {
        #[command(flatten)]
        io: IoArgs,
        #[arg(long)]
        shot: f64,
        #[arg(long)]
        read: f64,
        /// Skip the final clamp; output must be an .rfim file.
        #[arg(long)]
        pre_clamp: bool,
    },
    /// Fit shot/read coefficients from a noisy/clean pair.
    Estimate {
        #[arg(long)]
        raw: PathBuf,
        #[arg(long)]
        gt: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
enum StatsAction {
    /// Grand mean / standard deviation of a latent tensor (.rfim).
    Latent {
        #[arg(long)]
        input: PathBuf,
    },
}

fn read_to_string(path: &Path) -> Result<String, Error> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Tone-chain parameters from an explicit sidecar or the input's own.
fn load_params(input: &Path, meta: Option<&Path>) -> Result<PtpParams, Error> {
    let sidecar = meta
        .map(Path::to_path_buf)
        .unwrap_or_else(|| sidecar_path(input));
    if !sidecar.exists() {
        return Err(Error::MissingSidecar { path: sidecar });
    }
    let meta: CaptureMetadata =
        serde_json::from_str(&read_to_string(&sidecar)?).map_err(|source| Error::Json {
            path: sidecar,
            source,
        })?;
    meta.validate()?;
    params_from_metadata(&meta)
}

fn neutral_raw(plane: ImagePlane) -> Result<RawImage, Error> {
    RawImage::new(plane, CaptureMetadata::neutral(BayerPattern::Rggb))
}

fn three_planes(img: &LoadedImage) -> Option<SrgbImage> {
    match img {
        LoadedImage::Srgb(i) => Some(i.clone()),
        LoadedImage::Linear(i) => Some(SrgbImage {
            r: i.r.clone(),
            g: i.g.clone(),
            b: i.b.clone(),
        }),
        LoadedImage::Raw(_) => None,
    }
}

fn run_command(cli: Cli) -> Result<i32, Error> {
    let seed = cli.seed;
    match cli.command {
        Command::Synth { action } => {
            let SynthAction::Run {
                src,
                out,
                config,
                pattern,
                round_robin: _,
                ddnet_pairs,
            } = action;
            let synthesis = match config {
                Some(path) => SynthesisConfig::from_json(&read_to_string(&path)?)?,
                None => SynthesisConfig::default(),
            };
            let cfg = RunConfig {
                synthesis,
                master_seed: seed,
                pattern_policy: match pattern {
                    Some(p) => PatternPolicy::Fixed(p.into()),
                    None => PatternPolicy::RoundRobin,
                },
                ddnet_pairs,
            };
            let manifest = run_manifest(&src, &out, &cfg)?;
            println!(
                "{}",
                json!({
                    "records": manifest.records.len(),
                    "failures": manifest.failures.len(),
                    "manifest": out.join("manifest.json"),
                })
            );
            log::info!(
                "synthesized {} records ({} failures) into {}",
                manifest.records.len(),
                manifest.failures.len(),
                out.display()
            );
            Ok(if manifest.failures.is_empty() {
                EXIT_OK
            } else {
                EXIT_IO
            })
        }

        Command::Degrade { io, config } => {
            let depth = BitDepth::from_bits(io.bitdepth)?;
            let cfg = match config {
                Some(path) => DegradationConfig::from_json(&read_to_string(&path)?)?,
                None => DegradationConfig::default_pipeline(),
            };
            let hq = load_srgb(&io.input)?;
            let out = degrade_detail(&hq, &cfg, seed)?;
            save_srgb(&out.image, &io.output, depth)?;
            println!("{}", serde_json::to_string(&out.resolved).expect("serializes"));
            Ok(EXIT_OK)
        }

        Command::Isp { action } => match action {
            IspAction::Forward { io, meta, prefilter } => {
                let depth = BitDepth::from_bits(io.bitdepth)?;
                match load_image(&io.input, DomainHint::Auto)? {
                    LoadedImage::Raw(raw) => {
                        let preview = feed_forward_isp(&raw, prefilter)?;
                        save_srgb(&preview, &io.output, depth)?;
                    }
                    other => {
                        // A 3-channel input on the forward path is scene-linear.
                        let img = three_planes(&other).expect("raw handled above");
                        let linear = LinearImage {
                            r: img.r,
                            g: img.g,
                            b: img.b,
                        };
                        let params = load_params(&io.input, meta.as_deref())?;
                        save_srgb(&ptp_forward(&linear, &params), &io.output, depth)?;
                    }
                }
                Ok(EXIT_OK)
            }
            IspAction::Invert { io, meta } => {
                let depth = BitDepth::from_bits(io.bitdepth)?;
                let srgb = load_srgb(&io.input)?;
                let params = load_params(&io.input, meta.as_deref())?;
                save_linear(&ptp_inverse(&srgb, &params), &io.output, depth)?;
                Ok(EXIT_OK)
            }
        },

        Command::Mosaic { io, pattern } => {
            let depth = BitDepth::from_bits(io.bitdepth)?;
            let linear = load_linear(&io.input)?;
            let raw = mosaic(&linear, pattern.into())?;
            save_raw(&raw, &io.output, depth)?;
            Ok(EXIT_OK)
        }

        Command::Demosaic { io, method, prefilter } => {
            let depth = BitDepth::from_bits(io.bitdepth)?;
            let mut raw = load_raw(&io.input)?;
            if prefilter {
                raw = denoise_raw_gaussian(&raw);
            }
            let linear = match method {
                DemosaicMethod::Bilinear => demosaic_bilinear(&raw),
                DemosaicMethod::Malvar => demosaic_malvar(&raw)?,
            };
            save_linear(&linear, &io.output, depth)?;
            Ok(EXIT_OK)
        }

        Command::Noise { action } => match action {
            NoiseAction::Add { io, shot, read, pre_clamp } => {
                let depth = BitDepth::from_bits(io.bitdepth)?;
                let raw = load_raw(&io.input)?;
                let params = NoiseParams { shot, read };
                if pre_clamp {
                    let ok_ext = io
                        .output
                        .extension()
                        .is_some_and(|e| e.eq_ignore_ascii_case("rfim"));
                    if !ok_ext {
                        return Err(Error::InvalidArgument(
                            "--pre-clamp output must be an .rfim file (samples leave [0,1])".into(),
                        ));
                    }
                    let noisy = add_shot_read_noise_preclamp(&raw, params, seed)?;
                    save_rfim(&[&noisy.plane], &io.output)?;
                    let json = serde_json::to_vec_pretty(&noisy.meta).expect("serializes");
                    write_atomic(&sidecar_path(&io.output), &json)?;
                } else {
                    let noisy = add_shot_read_noise(&raw, params, seed)?;
                    save_raw(&noisy, &io.output, depth)?;
                }
                Ok(EXIT_OK)
            }
            NoiseAction::Estimate { raw, gt } => {
                let noisy = neutral_raw(load_plane(&raw)?)?;
                let clean = neutral_raw(load_plane(&gt)?)?;
                let (shot, read) = estimate_noise_curve(&noisy, &clean)?;
                println!("{}", json!({"shot": shot, "read": read}));
                Ok(EXIT_OK)
            }
        },

        Command::Eval { gt, pred, luma } => {
            let gt_img = load_image(&gt, DomainHint::Auto)?;
            let pred_img = load_image(&pred, DomainHint::Auto)?;
            let (p, s, pred_planes) = match (&gt_img, &pred_img) {
                (LoadedImage::Raw(a), LoadedImage::Raw(b)) => (
                    psnr(&a.plane, &b.plane, 1.0)?,
                    ssim_plane(&a.plane, &b.plane)?,
                    vec![b.plane.clone()],
                ),
                _ => {
                    let a = three_planes(&gt_img).ok_or_else(|| {
                        Error::DimensionMismatch("gt and pred channel counts differ".into())
                    })?;
                    let b = three_planes(&pred_img).ok_or_else(|| {
                        Error::DimensionMismatch("gt and pred channel counts differ".into())
                    })?;
                    if luma {
                        let (la, lb) = (luma_plane(&a)?, luma_plane(&b)?);
                        let m = psnr(&la, &lb, 1.0)?;
                        let s = ssim_plane(&la, &lb)?;
                        (m, s, vec![lb])
                    } else {
                        let m = psnr(&a, &b, 1.0)?;
                        let s = ssim(&a, &b)?;
                        (m, s, b.planes().into_iter().cloned().collect())
                    }
                }
            };
            // Fraction of prediction samples pinned at the range limits.
            let total: usize = pred_planes.iter().map(|p| p.data().len()).sum();
            let saturated: usize = pred_planes
                .iter()
                .map(|p| p.data().iter().filter(|&&v| v <= 0.0 || v >= 1.0).count())
                .sum();
            println!(
                "{}",
                json!({
                    "psnr": p.db,
                    "ssim": s,
                    "exact_match": p.exact,
                    "mask_fraction": saturated as f64 / total as f64,
                })
            );
            Ok(EXIT_OK)
        }

        Command::Stats { action } => {
            let StatsAction::Latent { input } = action;
            let bytes = std::fs::read(&input).map_err(|source| Error::Io {
                path: input.clone(),
                source,
            })?;
            let planes = decode_rfim(&bytes, &input)?;
            let batch = LatentBatch::from_planes(&planes)?;
            let (mean, sigma) = latent_scaling_factor(&batch)?;
            println!("{}", json!({"mean": mean, "sigma": sigma}));
            Ok(EXIT_OK)
        }

        Command::Gradcheck { pixels } => {
            let mut rng = DetRng::new(seed);
            let sampling = PtpSampling {
                gain_range: [0.8, 1.25],
                ..PtpSampling::default()
            };
            let mut max_rel = 0.0f64;
            let mut checked = 0usize;
            for gamma in [GammaCurve::SrgbStandard, GammaCurve::Power(2.2)] {
                for tone in [ToneCurve::Smoothstep, ToneCurve::Identity] {
                    let base = sample_ptp_params(&mut rng, &sampling)?;
                    let p = PtpParams::new(base.wb_gains(), base.ccm(), gamma, tone)?;
                    let mut n = 0;
                    while n < pixels {
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
                        let plus = ptp_forward_pixel(
                            &p,
                            [v[0] + h * t[0], v[1] + h * t[1], v[2] + h * t[2]],
                        );
                        let minus = ptp_forward_pixel(
                            &p,
                            [v[0] - h * t[0], v[1] - h * t[1], v[2] - h * t[2]],
                        );
                        let mut scale = 1e-6f64;
                        for c in 0..3 {
                            scale = scale.max(jet.tangent[c].abs());
                        }
                        for c in 0..3 {
                            let fd = (plus[c] - minus[c]) / (2.0 * h);
                            max_rel = max_rel.max((fd - jet.tangent[c]).abs() / scale);
                        }
                        n += 1;
                        checked += 1;
                    }
                }
            }
            let pass = max_rel < 1e-3;
            println!(
                "{}",
                json!({
                    "max_rel_err": max_rel,
                    "tolerance": 1e-3,
                    "pixels": checked,
                    "pass": pass,
                })
            );
            log::info!("gradcheck max relative error {max_rel:.3e} over {checked} pixels");
            Ok(if pass { EXIT_OK } else { EXIT_CHECK_FAILED })
        }

        Command::Selftest => {
            let report = selftest::run(seed);
            println!("{}", serde_json::to_string_pretty(&report).expect("serializes"));
            for suite in &report.suites {
                log::info!(
                    "{} {}",
                    if suite.passed { "PASS" } else { "FAIL" },
                    suite.suite
                );
            }
            Ok(if report.all_passed() {
                EXIT_OK
            } else {
                EXIT_CHECK_FAILED
            })
        }
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                std::process::exit(EXIT_OK);
            }
            eprint!("{e}");
            std::process::exit(EXIT_VALIDATION);
        }
    };

    let level = match cli.log_level {
        LogLevel::Quiet => log::LevelFilter::Off,
        LogLevel::Info => log::LevelFilter::Info,
        LogLevel::Debug => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();

    let threads = cli.threads.or_else(|| {
        std::env::var("RAWFORGE_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            std::process::exit(EXIT_VALIDATION);
        }
        builder = builder.num_threads(n);
    }
    let pool = match builder.build() {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: failed to build thread pool: {e}");
            std::process::exit(EXIT_VALIDATION);
        }
    };

    let outcome = pool.install(|| run_command(cli));
    match outcome {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(if e.is_io() { EXIT_IO } else { EXIT_VALIDATION });
        }
    }
}
