//! Lossless image file IO: PNG (8/16-bit), the RFIM raw-float container,
//! and JSON metadata sidecars.
//!
//! All writes go through a temp-file + atomic-rename so readers never observe
//! partial files.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use super::{CaptureMetadata, ImagePlane, LinearImage, RawImage, SrgbImage};
use crate::error::{Error, Result};

/// Magic bytes of the raw-float container.
pub const RFIM_MAGIC: &[u8; 4] = b"RFIM";
const RFIM_VERSION: u32 = 1;

/// Output quantization depth for PNG.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    pub fn max_code(self) -> f64 {
        match self {
            BitDepth::Eight => 255.0,
            BitDepth::Sixteen => 65535.0,
        }
    }

    pub fn from_bits(bits: u32) -> Result<Self> {
        match bits {
            8 => Ok(BitDepth::Eight),
            16 => Ok(BitDepth::Sixteen),
            _ => Err(Error::InvalidArgument(format!(
                "bit depth must be 8 or 16, got {bits}"
            ))),
        }
    }
}

/// An image file together with its resolved domain.
#[derive(Debug, Clone)]
pub enum LoadedImage {
    Srgb(SrgbImage),
    Linear(LinearImage),
    Raw(RawImage),
}

/// Domain expected by the caller when it cannot be inferred from the file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainHint {
    /// Grayscale + sidecar resolves to RAW; 3-channel resolves to sRGB.
    Auto,
    Srgb,
    Linear,
    Raw,
}

/// Path of the metadata sidecar: `<stem>.meta.json` next to the image.
pub fn sidecar_path(image_path: &Path) -> PathBuf {
    let stem = image_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    image_path.with_file_name(format!("{stem}.meta.json"))
}

/// Writes `bytes` to `path` via a temp file and atomic rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let stem = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = dir.join(format!(".{stem}.tmp{}", std::process::id()));
    fs::write(&tmp, bytes).map_err(io_err)?;
    fs::rename(&tmp, path).map_err(io_err)
}

fn quantize(plane: &ImagePlane, depth: BitDepth, path: &Path) -> Result<Vec<u16>> {
    let max = depth.max_code();
    plane
        .data()
        .iter()
        .map(|&v| {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::BadFile {
                    path: path.to_path_buf(),
                    reason: format!("sample {v} outside [0,1]; clamp before saving"),
                });
            }
            Ok((v as f64 * max).round() as u16)
        })
        .collect()
}

fn encode_png_rgb(planes: [&ImagePlane; 3], depth: BitDepth, path: &Path) -> Result<Vec<u8>> {
    let (w, h) = (planes[0].width(), planes[0].height());
    let chans: Vec<Vec<u16>> = planes
        .iter()
        .map(|p| quantize(p, depth, path))
        .collect::<Result<_>>()?;
    let img_err = |source| Error::Image {
        path: path.to_path_buf(),
        source,
    };
    let mut buf = Cursor::new(Vec::new());
    match depth {
        BitDepth::Eight => {
            let mut raw = Vec::with_capacity(w * h * 3);
            for i in 0..w * h {
                for c in &chans {
                    raw.push(c[i] as u8);
                }
            }
            let img: ImageBuffer<Rgb<u8>, _> =
                ImageBuffer::from_raw(w as u32, h as u32, raw).expect("sized buffer");
            DynamicImage::ImageRgb8(img)
                .write_to(&mut buf, image::ImageFormat::Png)
                .map_err(img_err)?;
        }
        BitDepth::Sixteen => {
            let mut raw = Vec::with_capacity(w * h * 3);
            for i in 0..w * h {
                for c in &chans {
                    raw.push(c[i]);
                }
            }
            let img: ImageBuffer<Rgb<u16>, _> =
                ImageBuffer::from_raw(w as u32, h as u32, raw).expect("sized buffer");
            DynamicImage::ImageRgb16(img)
                .write_to(&mut buf, image::ImageFormat::Png)
                .map_err(img_err)?;
        }
    }
    Ok(buf.into_inner())
}

fn encode_png_gray(plane: &ImagePlane, depth: BitDepth, path: &Path) -> Result<Vec<u8>> {
    let (w, h) = (plane.width(), plane.height());
    let codes = quantize(plane, depth, path)?;
    let img_err = |source| Error::Image {
        path: path.to_path_buf(),
        source,
    };
    let mut buf = Cursor::new(Vec::new());
    match depth {
        BitDepth::Eight => {
            let raw: Vec<u8> = codes.iter().map(|&c| c as u8).collect();
            let img: ImageBuffer<Luma<u8>, _> =
                ImageBuffer::from_raw(w as u32, h as u32, raw).expect("sized buffer");
            DynamicImage::ImageLuma8(img)
                .write_to(&mut buf, image::ImageFormat::Png)
                .map_err(img_err)?;
        }
        BitDepth::Sixteen => {
            let img: ImageBuffer<Luma<u16>, _> =
                ImageBuffer::from_raw(w as u32, h as u32, codes).expect("sized buffer");
            DynamicImage::ImageLuma16(img)
                .write_to(&mut buf, image::ImageFormat::Png)
                .map_err(img_err)?;
        }
    }
    Ok(buf.into_inner())
}

/// Serializes planes into the RFIM container (little-endian header + planar f32).
pub fn encode_rfim(planes: &[&ImagePlane]) -> Result<Vec<u8>> {
    let first = planes
        .first()
        .ok_or_else(|| Error::InvalidArgument("rfim needs at least one plane".into()))?;
    if planes.iter().any(|p| !p.same_size(first)) {
        return Err(Error::DimensionMismatch("rfim planes differ in size".into()));
    }
    let (w, h) = (first.width(), first.height());
    let mut out = Vec::with_capacity(20 + planes.len() * w * h * 4);
    out.extend_from_slice(RFIM_MAGIC);
    out.extend_from_slice(&RFIM_VERSION.to_le_bytes());
    out.extend_from_slice(&(planes.len() as u32).to_le_bytes());
    out.extend_from_slice(&(w as u32).to_le_bytes());
    out.extend_from_slice(&(h as u32).to_le_bytes());
    for p in planes {
        for v in p.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Parses an RFIM container into its planes.
pub fn decode_rfim(bytes: &[u8], path: &Path) -> Result<Vec<ImagePlane>> {
    let bad = |reason: &str| Error::BadFile {
        path: path.to_path_buf(),
        reason: reason.into(),
    };
    if bytes.len() < 20 || &bytes[0..4] != RFIM_MAGIC {
        return Err(bad("not an RFIM container"));
    }
    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    if u32_at(4) != RFIM_VERSION {
        return Err(bad("unsupported RFIM version"));
    }
    let (channels, w, h) = (u32_at(8) as usize, u32_at(12) as usize, u32_at(16) as usize);
    let expected = 20 + channels * w * h * 4;
    if channels == 0 || w == 0 || h == 0 || bytes.len() != expected {
        return Err(bad("RFIM payload size mismatch"));
    }
    let mut planes = Vec::with_capacity(channels);
    let mut off = 20;
    for _ in 0..channels {
        let mut data = Vec::with_capacity(w * h);
        for _ in 0..w * h {
            data.push(f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()));
            off += 4;
        }
        planes.push(ImagePlane::from_vec(w, h, data).map_err(|_| {
            bad("RFIM contains non-finite samples")
        })?);
    }
    Ok(planes)
}

/// Writes `planes` as an RFIM container.
pub fn save_rfim(planes: &[&ImagePlane], path: &Path) -> Result<()> {
    write_atomic(path, &encode_rfim(planes)?)
}

fn is_rfim(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("rfim"))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Decodes a file into planes normalized to `[0, 1]` (PNG) or raw f32 (RFIM).
fn load_planes(path: &Path) -> Result<Vec<ImagePlane>> {
    let bytes = read_bytes(path)?;
    if bytes.len() >= 4 && &bytes[0..4] == RFIM_MAGIC {
        return decode_rfim(&bytes, path);
    }
    let dynimg = image::load_from_memory(&bytes).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    let plane_from =
        |data: Vec<f32>| ImagePlane::from_vec(w, h, data).expect("decoded plane is well-formed");
    let split_rgb = |raw: &[u16], max: f32| -> Vec<ImagePlane> {
        (0..3)
            .map(|c| plane_from((0..w * h).map(|i| raw[3 * i + c] as f32 / max).collect()))
            .collect()
    };
    match dynimg {
        DynamicImage::ImageLuma8(img) => Ok(vec![plane_from(
            img.as_raw().iter().map(|&v| v as f32 / 255.0).collect(),
        )]),
        DynamicImage::ImageLuma16(img) => Ok(vec![plane_from(
            img.as_raw().iter().map(|&v| v as f32 / 65535.0).collect(),
        )]),
        DynamicImage::ImageRgb8(img) => {
            let raw: Vec<u16> = img.as_raw().iter().map(|&v| v as u16).collect();
            Ok(split_rgb(&raw, 255.0))
        }
        DynamicImage::ImageRgb16(img) => Ok(split_rgb(img.as_raw(), 65535.0)),
        other => Err(Error::BadFile {
            path: path.to_path_buf(),
            reason: format!(
                "unsupported pixel layout {:?}; expected 8/16-bit grayscale or RGB",
                other.color()
            ),
        }),
    }
}

fn want_three(path: &Path, planes: Vec<ImagePlane>) -> Result<(ImagePlane, ImagePlane, ImagePlane)> {
    if planes.len() != 3 {
        return Err(Error::BadFile {
            path: path.to_path_buf(),
            reason: format!("expected 3 channels, found {}", planes.len()),
        });
    }
    let mut it = planes.into_iter();
    Ok((it.next().unwrap(), it.next().unwrap(), it.next().unwrap()))
}

/// Loads a display-referred 3-channel image.
pub fn load_srgb(path: &Path) -> Result<SrgbImage> {
    let (r, g, b) = want_three(path, load_planes(path)?)?;
    SrgbImage::new(r, g, b)
}

/// Loads a scene-linear 3-channel image.
pub fn load_linear(path: &Path) -> Result<LinearImage> {
    let (r, g, b) = want_three(path, load_planes(path)?)?;
    LinearImage::new(r, g, b)
}

/// Loads a bare single-channel plane (no sidecar required).
pub fn load_plane(path: &Path) -> Result<ImagePlane> {
    let planes = load_planes(path)?;
    if planes.len() != 1 {
        return Err(Error::BadFile {
            path: path.to_path_buf(),
            reason: format!("expected 1 channel, found {}", planes.len()),
        });
    }
    Ok(planes.into_iter().next().unwrap())
}

/// Loads a RAW frame; the `<stem>.meta.json` sidecar is mandatory.
pub fn load_raw(path: &Path) -> Result<RawImage> {
    let plane = load_plane(path)?;
    let sidecar = sidecar_path(path);
    if !sidecar.exists() {
        return Err(Error::MissingSidecar { path: sidecar });
    }
    let meta: CaptureMetadata =
        serde_json::from_slice(&read_bytes(&sidecar)?).map_err(|source| Error::Json {
            path: sidecar.clone(),
            source,
        })?;
    meta.validate()?;
    if !meta.pre_clip {
        if let Some(v) = plane.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::BadFile {
                path: path.to_path_buf(),
                reason: format!("raw sample {v} outside [0,1] without pre_clip marker"),
            });
        }
    }
    RawImage::new(plane, meta)
}

/// Loads a file, resolving its domain from content and `hint`.
pub fn load_image(path: &Path, hint: DomainHint) -> Result<LoadedImage> {
    match hint {
        DomainHint::Srgb => Ok(LoadedImage::Srgb(load_srgb(path)?)),
        DomainHint::Linear => Ok(LoadedImage::Linear(load_linear(path)?)),
        DomainHint::Raw => Ok(LoadedImage::Raw(load_raw(path)?)),
        DomainHint::Auto => {
            let planes = load_planes(path)?;
            match planes.len() {
                1 => Ok(LoadedImage::Raw(load_raw(path)?)),
                3 => {
                    let (r, g, b) = want_three(path, planes)?;
                    Ok(LoadedImage::Srgb(SrgbImage::new(r, g, b)?))
                }
                n => Err(Error::BadFile {
                    path: path.to_path_buf(),
                    reason: format!("cannot infer domain of a {n}-channel file"),
                }),
            }
        }
    }
}

/// Saves a 3-channel sRGB image as PNG (or RFIM by extension).
pub fn save_srgb(img: &SrgbImage, path: &Path, depth: BitDepth) -> Result<()> {
    if is_rfim(path) {
        return save_rfim(&img.planes(), path);
    }
    write_atomic(path, &encode_png_rgb(img.planes(), depth, path)?)
}

/// Saves a 3-channel linear image as PNG (or RFIM by extension).
pub fn save_linear(img: &LinearImage, path: &Path, depth: BitDepth) -> Result<()> {
    if is_rfim(path) {
        return save_rfim(&img.planes(), path);
    }
    write_atomic(path, &encode_png_rgb(img.planes(), depth, path)?)
}

/// Saves a grayscale plane as PNG.
pub fn save_plane_png(plane: &ImagePlane, path: &Path, depth: BitDepth) -> Result<()> {
    write_atomic(path, &encode_png_gray(plane, depth, path)?)
}

/// Saves a RAW frame plus its metadata sidecar.
///
/// Pre-clip frames (samples outside `[0, 1]`) can only go to RFIM.
pub fn save_raw(raw: &RawImage, path: &Path, depth: BitDepth) -> Result<()> {
    if is_rfim(path) {
        save_rfim(&[&raw.plane], path)?;
    } else {
        write_atomic(path, &encode_png_gray(&raw.plane, depth, path)?)?;
    }
    let json = serde_json::to_vec_pretty(&raw.meta).expect("metadata serializes");
    write_atomic(&sidecar_path(path), &json)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cfa::BayerPattern;
    use proptest::prelude::*;

    fn tmpdir() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn png8_full_scale_normalizes_to_one() {
        let dir = tmpdir();
        let path = dir.path().join("w.png");
        let img = SrgbImage::filled(2, 2, [1.0, 1.0, 1.0]);
        save_srgb(&img, &path, BitDepth::Eight).unwrap();
        let back = load_srgb(&path).unwrap();
        assert!(back.r.data().iter().all(|&v| v == 1.0));
        assert!(back.b.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn png8_zero_stays_zero() {
        let dir = tmpdir();
        let path = dir.path().join("b.png");
        save_srgb(&SrgbImage::filled(2, 2, [0.0; 3]), &path, BitDepth::Eight).unwrap();
        let back = load_srgb(&path).unwrap();
        assert!(back.planes().iter().all(|p| p.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn png16_midcode_normalization() {
        // code 32768 at 16 bit -> 32768/65535.
        let dir = tmpdir();
        let path = dir.path().join("m.png");
        let v = (32768.0f64 / 65535.0) as f32;
        save_srgb(&SrgbImage::filled(2, 2, [v; 3]), &path, BitDepth::Sixteen).unwrap();
        let back = load_srgb(&path).unwrap();
        let got = back.r.get(0, 0);
        assert!((got - 0.500_007_6).abs() < 1e-7, "got {got}");
    }

    #[test]
    fn quantization_rounds_half_up() {
        // 0.5 * 255 = 127.5 -> 128; 1.0 -> 255.
        let dir = tmpdir();
        let path = dir.path().join("q.png");
        save_plane_png(&ImagePlane::filled(1, 1, 0.5), &path, BitDepth::Eight).unwrap();
        let img = image::open(&path).unwrap().into_luma8();
        assert_eq!(img.get_pixel(0, 0).0[0], 128);
        save_plane_png(&ImagePlane::filled(1, 1, 1.0), &path, BitDepth::Eight).unwrap();
        let img = image::open(&path).unwrap().into_luma8();
        assert_eq!(img.get_pixel(0, 0).0[0], 255);
    }

    #[test]
    fn save_rejects_out_of_range() {
        let dir = tmpdir();
        let path = dir.path().join("r.png");
        let img = SrgbImage::filled(2, 2, [1.5, 0.0, 0.0]);
        assert!(save_srgb(&img, &path, BitDepth::Eight).is_err());
    }

    #[test]
    fn raw_roundtrip_with_sidecar() {
        let dir = tmpdir();
        let path = dir.path().join("frame.png");
        let meta = CaptureMetadata {
            wb_gains: [1.9, 1.0, 1.4],
            shot: 0.01,
            read: 0.001,
            seed: 77,
            ..CaptureMetadata::neutral(BayerPattern::Grbg)
        };
        let raw = RawImage::new(ImagePlane::from_fn(4, 4, |x, y| (x + y) as f32 / 8.0), meta).unwrap();
        save_raw(&raw, &path, BitDepth::Sixteen).unwrap();
        let back = load_raw(&path).unwrap();
        assert_eq!(back.meta, raw.meta);
        assert_eq!(back.pattern(), BayerPattern::Grbg);
    }

    #[test]
    fn raw_without_sidecar_errors() {
        let dir = tmpdir();
        let path = dir.path().join("frame.png");
        save_plane_png(&ImagePlane::filled(4, 4, 0.5), &path, BitDepth::Eight).unwrap();
        assert!(matches!(load_raw(&path), Err(Error::MissingSidecar { .. })));
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_srgb(Path::new("/nonexistent/x.png")).unwrap_err();
        assert!(err.is_io());
    }

    #[test]
    fn channel_mismatch_rejected() {
        let dir = tmpdir();
        let path = dir.path().join("gray.png");
        save_plane_png(&ImagePlane::filled(4, 4, 0.5), &path, BitDepth::Eight).unwrap();
        assert!(load_srgb(&path).is_err());
    }

    #[test]
    fn rfim_roundtrip_exact() {
        let dir = tmpdir();
        let path = dir.path().join("x.rfim");
        let p0 = ImagePlane::from_fn(3, 2, |x, y| x as f32 - 2.5 * y as f32);
        let p1 = ImagePlane::from_fn(3, 2, |x, y| (x * y) as f32 * 1e-3);
        save_rfim(&[&p0, &p1], &path).unwrap();
        let back = decode_rfim(&fs::read(&path).unwrap(), &path).unwrap();
        assert_eq!(back, vec![p0, p1]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn png_roundtrip_within_half_step(
            seed in any::<u64>(),
            sixteen in any::<bool>(),
        ) {
            let depth = if sixteen { BitDepth::Sixteen } else { BitDepth::Eight };
            let mut rng = crate::rng::DetRng::new(seed);
            let plane = ImagePlane::from_fn(6, 5, |_, _| rng.next_f64() as f32);
            let dir = tmpdir();
            let path = dir.path().join("p.png");
            save_plane_png(&plane, &path, depth).unwrap();
            let back = load_plane(&path).unwrap();
            let half_step = 0.5 / depth.max_code() as f32 + 1e-7;
            for (a, b) in plane.data().iter().zip(back.data()) {
                prop_assert!((a - b).abs() <= half_step, "{a} vs {b}");
            }
        }
    }
}
