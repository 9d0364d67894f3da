//! Grayscale raster, PGM/BMP decoding, PGM encoding and synthetic noise.
//!
//! Pixels are stored as `f64` so downstream filtering and wavelet math is
//! lossless; quantization to 8 bits happens only in [`save_image`].

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Luma weights (R, G, B) used for colour inputs.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error("failed to access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported or malformed image ({field}): {detail}")]
    Format { field: &'static str, detail: String },
    #[error("invalid dimensions {width}x{height} for {len} samples")]
    Dimensions { width: usize, height: usize, len: usize },
}

impl ImageError {
    fn format(field: &'static str, detail: impl Into<String>) -> Self {
        ImageError::Format {
            field,
            detail: detail.into(),
        }
    }
}

pub type ImageResult<T> = Result<T, ImageError>;

/// Row-major real-valued intensity raster.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> ImageResult<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(ImageError::Dimensions {
                width,
                height,
                len: data.len(),
            });
        }
        Ok(Self { width, height, data })
    }

    /// Constant image. Panics on a zero dimension.
    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    /// Builds an image by evaluating `f(x, y)` for every pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        self.data[y * self.width + x] = value;
    }

    /// Pixel lookup with replicate-edge border handling.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let cx = x.clamp(0, self.width as isize - 1) as usize;
        let cy = y.clamp(0, self.height as isize - 1) as usize;
        self.data[cy * self.width + cx]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Values rounded half away from zero and clamped to `[0, 255]`.
    pub fn quantized(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize(v)).collect()
    }
}

#[inline]
fn quantize(v: f64) -> u8 {
    if v.is_nan() {
        return 0;
    }
    v.round().clamp(0.0, 255.0) as u8
}

/// Luma of an RGB triple, kept inside the channel range.
pub fn luma(r: u8, g: u8, b: u8) -> f64 {
    let (rf, gf, bf) = (r as f64, g as f64, b as f64);
    let y = LUMA_WEIGHTS[0] * rf + LUMA_WEIGHTS[1] * gf + LUMA_WEIGHTS[2] * bf;
    let lo = rf.min(gf).min(bf);
    let hi = rf.max(gf).max(bf);
    y.clamp(lo, hi)
}

/// Standard deviation and seed of additive Gaussian noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(sigma: f64, seed: u64) -> ImageResult<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(ImageError::format(
                "sigma",
                format!("noise sigma must be >= 0, got {sigma}"),
            ));
        }
        Ok(Self { sigma, seed })
    }
}

/// Standard normal variates by the Box-Muller transform over ChaCha8.
///
/// Each uniform pair yields two variates; the second is cached for the
/// next call, so the stream for a given seed is fixed.
pub struct BoxMuller {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl BoxMuller {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    pub fn next_standard(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // u1 in (0, 1] keeps ln finite.
        let u1: f64 = 1.0 - self.rng.gen::<f64>();
        let u2: f64 = self.rng.gen::<f64>();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = std::f64::consts::TAU * u2;
        self.spare = Some(radius * angle.sin());
        radius * angle.cos()
    }
}

/// Returns `img + n` with `n ~ N(0, sigma^2)` i.i.d. per pixel. Not clamped.
pub fn add_gaussian_noise(img: &GrayImage, spec: &NoiseSpec) -> GrayImage {
    if spec.sigma == 0.0 {
        return img.clone();
    }
    let mut gen = BoxMuller::new(spec.seed);
    let data = img.data.iter().map(|&v| v + spec.sigma * gen.next_standard()).collect();
    GrayImage {
        width: img.width,
        height: img.height,
        data,
    }
}

pub fn load_image(path: impl AsRef<Path>) -> ImageResult<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| ImageError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&bytes)
}

/// Decodes PGM (P2/P5) or BMP bytes, dispatching on the magic number.
pub fn decode(bytes: &[u8]) -> ImageResult<GrayImage> {
    match bytes {
        [b'P', b'2', ..] => decode_pgm(bytes, false),
        [b'P', b'5', ..] => decode_pgm(bytes, true),
        [b'B', b'M', ..] => decode_bmp(bytes),
        _ => Err(ImageError::format(
            "magic",
            format!("unrecognized magic {:?}", &bytes[..bytes.len().min(2)]),
        )),
    }
}

struct PnmHeader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> PnmHeader<'a> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            let c = self.bytes[self.pos];
            if c == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if c.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn next_uint(&mut self, field: &'static str) -> ImageResult<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(ImageError::format(field, "expected an unsigned integer"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| ImageError::format(field, "integer out of range"))
    }
}

fn decode_pgm(bytes: &[u8], binary: bool) -> ImageResult<GrayImage> {
    let mut hdr = PnmHeader { bytes, pos: 2 };
    let width = hdr.next_uint("width")?;
    let height = hdr.next_uint("height")?;
    let maxval = hdr.next_uint("maxval")?;
    if width == 0 || height == 0 {
        return Err(ImageError::format("width", format!("zero dimension {width}x{height}")));
    }
    if maxval != 255 {
        return Err(ImageError::format(
            "maxval",
            format!("only maxval 255 is supported, got {maxval}"),
        ));
    }
    let count = width
        .checked_mul(height)
        .ok_or_else(|| ImageError::format("width", "dimensions overflow"))?;
    let data = if binary {
        // Exactly one whitespace byte separates maxval from the raster.
        let start = hdr.pos + 1;
        let raster = bytes
            .get(start..start + count)
            .ok_or_else(|| ImageError::format("raster", format!("expected {count} bytes of pixel data")))?;
        raster.iter().map(|&b| b as f64).collect()
    } else {
        let mut data = Vec::with_capacity(count);
        for _ in 0..count {
            let v = hdr.next_uint("raster")?;
            if v > maxval {
                return Err(ImageError::format("raster", format!("sample {v} exceeds maxval")));
            }
            data.push(v as f64);
        }
        data
    };
    GrayImage::new(width, height, data)
}

fn read_u16(bytes: &[u8], at: usize) -> ImageResult<u16> {
    bytes
        .get(at..at + 2)
        .map(|b| u16::from_le_bytes([b[0], b[1]]))
        .ok_or_else(|| ImageError::format("header", "truncated BMP header"))
}

fn read_u32(bytes: &[u8], at: usize) -> ImageResult<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| ImageError::format("header", "truncated BMP header"))
}

fn decode_bmp(bytes: &[u8]) -> ImageResult<GrayImage> {
    let pixel_offset = read_u32(bytes, 10)? as usize;
    let info_size = read_u32(bytes, 14)? as usize;
    if info_size < 40 {
        return Err(ImageError::format(
            "biSize",
            format!("unsupported info header size {info_size}"),
        ));
    }
    let raw_width = read_u32(bytes, 18)? as i32;
    let raw_height = read_u32(bytes, 22)? as i32;
    let planes = read_u16(bytes, 26)?;
    let bpp = read_u16(bytes, 28)?;
    let compression = read_u32(bytes, 30)?;
    let colors_used = read_u32(bytes, 46)? as usize;

    if planes != 1 {
        return Err(ImageError::format("biPlanes", format!("expected 1, got {planes}")));
    }
    if compression != 0 {
        return Err(ImageError::format(
            "biCompression",
            format!("only BI_RGB (0) is supported, got {compression}"),
        ));
    }
    if raw_width <= 0 || raw_height == 0 {
        return Err(ImageError::format(
            "biWidth",
            format!("invalid dimensions {raw_width}x{raw_height}"),
        ));
    }
    let width = raw_width as usize;
    let height = raw_height.unsigned_abs() as usize;
    let top_down = raw_height < 0;

    let palette = match bpp {
        8 => {
            let entries = if colors_used == 0 { 256 } else { colors_used };
            let start = 14 + info_size;
            let table = bytes
                .get(start..start + 4 * entries)
                .ok_or_else(|| ImageError::format("palette", "truncated colour table"))?;
            let mut gray = Vec::with_capacity(entries);
            for (i, e) in table.chunks_exact(4).enumerate() {
                let (b, g, r) = (e[0], e[1], e[2]);
                if r != g || g != b {
                    return Err(ImageError::format(
                        "palette",
                        format!("entry {i} is not gray: ({r},{g},{b})"),
                    ));
                }
                gray.push(r as f64);
            }
            Some(gray)
        }
        24 => None,
        other => {
            return Err(ImageError::format(
                "biBitCount",
                format!("only 8-bit indexed and 24-bit RGB are supported, got {other}"),
            ))
        }
    };

    let row_bytes = (width * bpp as usize).div_ceil(32) * 4;
    let needed = pixel_offset + row_bytes * height;
    if bytes.len() < needed {
        return Err(ImageError::format(
            "raster",
            format!("expected {needed} bytes, file has {}", bytes.len()),
        ));
    }

    let mut data = vec![0.0; width * height];
    for file_row in 0..height {
        let y = if top_down { file_row } else { height - 1 - file_row };
        let row = &bytes[pixel_offset + file_row * row_bytes..][..row_bytes];
        let out = &mut data[y * width..(y + 1) * width];
        match &palette {
            Some(gray) => {
                for (dst, &idx) in out.iter_mut().zip(row) {
                    *dst = *gray
                        .get(idx as usize)
                        .ok_or_else(|| ImageError::format("raster", format!("palette index {idx} out of range")))?;
                }
            }
            None => {
                for (dst, px) in out.iter_mut().zip(row.chunks_exact(3)) {
                    *dst = luma(px[2], px[1], px[0]);
                }
            }
        }
    }
    GrayImage::new(width, height, data)
}

/// Encodes as binary PGM (P5, maxval 255).
pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.quantized());
    out
}

pub fn save_image(img: &GrayImage, path: impl AsRef<Path>) -> ImageResult<()> {
    let path = path.as_ref();
    let io_err = |source| ImageError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut file = fs::File::create(path).map_err(io_err)?;
    file.write_all(&encode_pgm(img)).map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn bmp_24(width: usize, height: usize, rgb: &[(u8, u8, u8)]) -> Vec<u8> {
        let row_bytes = (width * 24).div_ceil(32) * 4;
        let mut out = Vec::new();
        out.extend(b"BM");
        out.extend(((54 + row_bytes * height) as u32).to_le_bytes());
        out.extend([0u8; 4]);
        out.extend(54u32.to_le_bytes());
        out.extend(40u32.to_le_bytes());
        out.extend((width as i32).to_le_bytes());
        out.extend((height as i32).to_le_bytes());
        out.extend(1u16.to_le_bytes());
        out.extend(24u16.to_le_bytes());
        out.extend([0u8; 24]);
        for y in (0..height).rev() {
            let mut row = Vec::new();
            for x in 0..width {
                let (r, g, b) = rgb[y * width + x];
                row.extend([b, g, r]);
            }
            row.resize(row_bytes, 0);
            out.extend(row);
        }
        out
    }

    #[test]
    fn decodes_ascii_pgm() {
        let img = decode(b"P2\n# comment\n2 2\n255\n0 0 0 0\n").unwrap();
        assert_eq!((img.width(), img.height()), (2, 2));
        assert!(img.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_other_maxval() {
        let err = decode(b"P2 1 1 15 3").unwrap_err();
        assert!(matches!(err, ImageError::Format { field: "maxval", .. }));
    }

    #[test]
    fn bmp_rgb_luma() {
        let img = decode(&bmp_24(2, 1, &[(255, 255, 255), (100, 200, 50)])).unwrap();
        assert_eq!(img.get(0, 0), 255.0);
        // 0.299*100 + 0.587*200 + 0.114*50
        assert!((img.get(1, 0) - 153.0).abs() < 1e-9);
    }

    #[test]
    fn bmp_rows_are_bottom_up() {
        let img = decode(&bmp_24(1, 2, &[(10, 10, 10), (20, 20, 20)])).unwrap();
        assert_eq!(img.get(0, 0), 10.0);
        assert_eq!(img.get(0, 1), 20.0);
    }

    #[test]
    fn bmp_rle_rejected_with_field() {
        let mut bytes = bmp_24(1, 1, &[(0, 0, 0)]);
        bytes[30] = 1;
        let err = decode(&bytes).unwrap_err();
        assert!(
            matches!(
                err,
                ImageError::Format {
                    field: "biCompression",
                    ..
                }
            ),
            "{err}"
        );
    }

    #[test]
    fn bmp_indexed_colour_palette_rejected() {
        let mut out = Vec::new();
        out.extend(b"BM");
        out.extend(0u32.to_le_bytes());
        out.extend([0u8; 4]);
        out.extend((54u32 + 8).to_le_bytes());
        out.extend(40u32.to_le_bytes());
        out.extend(1i32.to_le_bytes());
        out.extend(1i32.to_le_bytes());
        out.extend(1u16.to_le_bytes());
        out.extend(8u16.to_le_bytes());
        out.extend(0u32.to_le_bytes());
        out.extend([0u8; 12]);
        out.extend(2u32.to_le_bytes());
        out.extend(0u32.to_le_bytes());
        out.extend([7, 7, 7, 0, 1, 2, 3, 0]);
        out.extend([0, 0, 0, 0]);
        let err = decode(&out).unwrap_err();
        assert!(matches!(err, ImageError::Format { field: "palette", .. }), "{err}");

        // Same file with a gray second entry decodes through the palette.
        let n = out.len();
        out[n - 8..n - 4].copy_from_slice(&[9, 9, 9, 0]);
        out[n - 4] = 1;
        assert_eq!(decode(&out).unwrap().get(0, 0), 9.0);
    }

    #[test]
    fn save_rounds_and_clamps() {
        let img = GrayImage::new(3, 1, vec![254.6, -3.0, 2.5]).unwrap();
        let bytes = encode_pgm(&img);
        assert_eq!(&bytes[bytes.len() - 3..], &[255, 0, 3]);
    }

    #[test]
    fn save_and_reload_zero_image() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.pgm");
        save_image(&GrayImage::filled(4, 4, 0.0), &path).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back, GrayImage::filled(4, 4, 0.0));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(load_image("/nonexistent/x.pgm"), Err(ImageError::Io { .. })));
    }

    #[test]
    fn zero_sigma_noise_is_identity() {
        let img = GrayImage::from_fn(5, 4, |x, y| (x * 7 + y) as f64);
        assert_eq!(add_gaussian_noise(&img, &NoiseSpec::new(0.0, 99).unwrap()), img);
    }

    #[test]
    fn noise_is_deterministic_and_calibrated() {
        let img = GrayImage::filled(256, 256, 128.0);
        let spec = NoiseSpec::new(10.0, 7).unwrap();
        let a = add_gaussian_noise(&img, &spec);
        let b = add_gaussian_noise(&img, &spec);
        assert_eq!(a.data(), b.data());

        let diffs: Vec<f64> = a.data().iter().map(|v| v - 128.0).collect();
        let n = diffs.len() as f64;
        let mean = diffs.iter().sum::<f64>() / n;
        let std = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 0.5, "mean {mean}");
        assert!((std - 10.0).abs() < 0.5, "std {std}");
    }

    #[test]
    fn negative_sigma_rejected() {
        assert!(NoiseSpec::new(-1.0, 0).is_err());
    }

    proptest::proptest! {
        #[test]
        fn luma_is_convex(r: u8, g: u8, b: u8) {
            let y = luma(r, g, b);
            let lo = r.min(g).min(b) as f64;
            let hi = r.max(g).max(b) as f64;
            proptest::prop_assert!(y >= lo && y <= hi);
        }

        #[test]
        fn pgm_round_trip_within_half(values in proptest::collection::vec(0.0f64..=255.0, 12)) {
            let img = GrayImage::new(4, 3, values).unwrap();
            let back = decode(&encode_pgm(&img)).unwrap();
            for (a, b) in img.data().iter().zip(back.data()) {
                proptest::prop_assert!((a - b).abs() <= 0.5);
            }
        }
    }
}
