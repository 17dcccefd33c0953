//! Image decoding and the deterministic pixel operations used by the hashes.
//!
//! Every operation here is integer-only with round-half-up rounding, so the
//! same input produces bit-identical output on every platform.

use std::fmt;
use std::io::Cursor;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ImagingError {
    #[error("malformed image file: {0}")]
    MalformedFile(String),
    #[error("unsupported image variant: {0}")]
    UnsupportedVariant(String),
    #[error("invalid image buffer: {0}")]
    InvalidBuffer(String),
    #[error("invalid transform: {0}")]
    InvalidTransform(String),
}

pub type Result<T> = std::result::Result<T, ImagingError>;

/// Row-major 8-bit image with one (luma) or three (RGB) interleaved channels.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl fmt::Debug for ImageBuffer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ImageBuffer")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("channels", &self.channels)
            .finish_non_exhaustive()
    }
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(ImagingError::InvalidBuffer(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(ImagingError::InvalidBuffer(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        let expected = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(channels))
            .ok_or_else(|| ImagingError::InvalidBuffer("dimensions overflow".into()))?;
        if data.len() != expected {
            return Err(ImagingError::InvalidBuffer(format!(
                "expected {expected} samples, got {}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn luma(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        Self::new(width, height, 1, data)
    }

    pub fn rgb(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        Self::new(width, height, 3, data)
    }

    /// A single-channel image with every sample set to `value`.
    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Self::luma(width, height, vec![value; width.saturating_mul(height)])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    /// Sample at `(x, y)` for channel `c`.
    pub fn sample(&self, x: usize, y: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels + c]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Pgm,
    Ppm,
    Png,
}

impl ImageFormat {
    /// Sniffs the format from the leading magic bytes.
    pub fn detect(bytes: &[u8]) -> Option<Self> {
        match bytes {
            [b'P', b'5', ..] => Some(Self::Pgm),
            [b'P', b'6', ..] => Some(Self::Ppm),
            [0x89, b'P', b'N', b'G', ..] => Some(Self::Png),
            _ => None,
        }
    }

    pub fn from_extension(path: &Path) -> Option<Self> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        match ext.as_str() {
            "pgm" => Some(Self::Pgm),
            "ppm" => Some(Self::Ppm),
            "png" => Some(Self::Png),
            _ => None,
        }
    }
}

impl FromStr for ImageFormat {
    type Err = ImagingError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pgm" => Ok(Self::Pgm),
            "ppm" => Ok(Self::Ppm),
            "png" => Ok(Self::Png),
            other => Err(ImagingError::UnsupportedVariant(format!("format {other:?}"))),
        }
    }
}

/// Decodes `bytes` as the declared format.
pub fn load_image(bytes: &[u8], format: ImageFormat) -> Result<ImageBuffer> {
    match format {
        ImageFormat::Pgm => decode_pnm(bytes, b'5'),
        ImageFormat::Ppm => decode_pnm(bytes, b'6'),
        ImageFormat::Png => decode_png(bytes),
    }
}

/// Decodes `bytes`, sniffing the format from its magic number.
pub fn load_image_auto(bytes: &[u8]) -> Result<ImageBuffer> {
    let format = ImageFormat::detect(bytes)
        .ok_or_else(|| ImagingError::MalformedFile("unrecognized magic".into()))?;
    load_image(bytes, format)
}

/// Reads and decodes an image file.
pub fn load_image_file(path: &Path) -> std::result::Result<ImageBuffer, String> {
    let bytes = std::fs::read(path).map_err(|e| e.to_string())?;
    load_image_auto(&bytes).map_err(|e| e.to_string())
}

struct PnmCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl PnmCursor<'_> {
    fn skip_whitespace_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn read_uint(&mut self, what: &str) -> Result<usize> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(ImagingError::MalformedFile(format!("missing {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| ImagingError::MalformedFile(format!("bad {what}")))
    }
}

fn decode_pnm(bytes: &[u8], kind: u8) -> Result<ImageBuffer> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(ImagingError::MalformedFile("bad magic".into()));
    }
    match bytes[1] {
        k if k == kind => {}
        b'2' | b'3' => {
            return Err(ImagingError::UnsupportedVariant(
                "ASCII PNM (P2/P3) is not supported".into(),
            ))
        }
        _ => return Err(ImagingError::MalformedFile("bad magic".into())),
    }
    let mut cur = PnmCursor { bytes, pos: 2 };
    let width = cur.read_uint("width")?;
    let height = cur.read_uint("height")?;
    let maxval = cur.read_uint("maxval")?;
    if width == 0 || height == 0 {
        return Err(ImagingError::MalformedFile("zero dimension".into()));
    }
    if maxval != 255 {
        return Err(ImagingError::UnsupportedVariant(format!(
            "maxval {maxval} (only 255 is supported)"
        )));
    }
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(ImagingError::MalformedFile("missing raster separator".into())),
    }
    let channels = if kind == b'5' { 1 } else { 3 };
    let len = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| ImagingError::MalformedFile("dimensions overflow".into()))?;
    let raster = bytes
        .get(cur.pos..)
        .filter(|r| r.len() >= len)
        .ok_or_else(|| {
            ImagingError::MalformedFile(format!(
                "truncated raster: expected {len} bytes, found {}",
                bytes.len().saturating_sub(cur.pos)
            ))
        })?;
    ImageBuffer::new(width, height, channels, raster[..len].to_vec())
}

fn decode_png(bytes: &[u8]) -> Result<ImageBuffer> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = decoder
        .read_info()
        .map_err(|e| ImagingError::MalformedFile(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| ImagingError::UnsupportedVariant("PNG too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| ImagingError::MalformedFile(e.to_string()))?;
    let (width, height) = (info.width as usize, info.height as usize);
    let src_channels = info.color_type.samples();
    let keep = match info.color_type {
        png::ColorType::Grayscale | png::ColorType::GrayscaleAlpha => 1,
        png::ColorType::Rgb | png::ColorType::Rgba => 3,
        png::ColorType::Indexed => {
            return Err(ImagingError::UnsupportedVariant("unexpanded palette".into()))
        }
    };
    let mut data = Vec::with_capacity(width * height * keep);
    for row in buf.chunks(info.line_size).take(height) {
        for px in row[..width * src_channels].chunks(src_channels) {
            data.extend_from_slice(&px[..keep]);
        }
    }
    ImageBuffer::new(width, height, keep, data)
}

/// Encodes as binary PGM (1 channel) or PPM (3 channels), maxval 255.
pub fn encode_pnm(img: &ImageBuffer) -> Vec<u8> {
    let magic = if img.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

/// Rec.601 luma: `round(0.299 R + 0.587 G + 0.114 B)`. One-channel input is returned as is.
pub fn to_luminance(img: &ImageBuffer) -> ImageBuffer {
    if img.channels == 1 {
        return img.clone();
    }
    let data = img
        .data
        .chunks_exact(3)
        .map(|px| {
            let weighted = 299 * u32::from(px[0]) + 587 * u32::from(px[1]) + 114 * u32::from(px[2]);
            ((weighted + 500) / 1000).min(255) as u8
        })
        .collect();
    ImageBuffer {
        width: img.width,
        height: img.height,
        channels: 1,
        data,
    }
}

/// Overlap of each source cell with one destination cell, in units where a
/// source cell spans `dst_len` and a destination cell spans `src_len`.
fn box_weights(src_len: usize, dst_len: usize) -> Vec<Vec<(usize, u64)>> {
    (0..dst_len)
        .map(|d| {
            let lo = d * src_len;
            let hi = lo + src_len;
            let first = lo / dst_len;
            let last = (hi - 1) / dst_len;
            (first..=last)
                .map(|s| {
                    let s_lo = s * dst_len;
                    let s_hi = s_lo + dst_len;
                    (s, (hi.min(s_hi) - lo.max(s_lo)) as u64)
                })
                .collect()
        })
        .collect()
}

/// Area-average resampling to `width` x `height`, rounded half-up.
///
/// Works on any channel count; each output sample is the exact area-weighted
/// mean of the source samples it covers.
pub fn resize_box(img: &ImageBuffer, width: usize, height: usize) -> Result<ImageBuffer> {
    if width == 0 || height == 0 {
        return Err(ImagingError::InvalidTransform(format!(
            "resize target must be positive, got {width}x{height}"
        )));
    }
    let wx = box_weights(img.width, width);
    let wy = box_weights(img.height, height);
    let area = (img.width * img.height) as u64;
    let ch = img.channels;
    let mut data = Vec::with_capacity(width * height * ch);
    for row in &wy {
        for col in &wx {
            for c in 0..ch {
                let mut sum = 0u64;
                for &(y, wgt_y) in row {
                    let line = &img.data[y * img.width * ch..];
                    for &(x, wgt_x) in col {
                        sum += wgt_y * wgt_x * u64::from(line[x * ch + c]);
                    }
                }
                data.push(((2 * sum + area) / (2 * area)) as u8);
            }
        }
    }
    ImageBuffer::new(width, height, ch, data)
}

/// The mild, semantics-preserving edits used for robustness testing.
///
/// Rotation is deliberately absent: neither hash is rotation invariant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TransformSpec {
    Grayscale,
    Resize { width: usize, height: usize },
    /// Additive shift in `[-64, 64]`, saturating at 0 and 255.
    BrightnessShift(i16),
    /// Mean filter over a `(2r+1)^2` window, `r` in `{1, 2, 3}`.
    BoxBlur(u8),
    /// Keeps the centred `fraction` of each dimension, `fraction` in `[0.8, 1.0)`.
    CenterCrop(f64),
    MirrorHorizontal,
}

impl TransformSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Resize { width, height } if width == 0 || height == 0 => Err(
                ImagingError::InvalidTransform("resize dimensions must be positive".into()),
            ),
            Self::BrightnessShift(d) if !(-64..=64).contains(&d) => Err(
                ImagingError::InvalidTransform(format!("brightness shift {d} outside [-64, 64]")),
            ),
            Self::BoxBlur(r) if !(1..=3).contains(&r) => Err(ImagingError::InvalidTransform(
                format!("blur radius {r} outside {{1, 2, 3}}"),
            )),
            Self::CenterCrop(f) if !(0.8..1.0).contains(&f) => Err(
                ImagingError::InvalidTransform(format!("crop fraction {f} outside [0.8, 1.0)")),
            ),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for TransformSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Grayscale => write!(f, "grayscale"),
            Self::Resize { width, height } => write!(f, "resize:{width}x{height}"),
            Self::BrightnessShift(d) => write!(f, "brightness:{d:+}"),
            Self::BoxBlur(r) => write!(f, "blur:{r}"),
            Self::CenterCrop(fr) => write!(f, "crop:{fr}"),
            Self::MirrorHorizontal => write!(f, "mirror"),
        }
    }
}

impl FromStr for TransformSpec {
    type Err = ImagingError;

    /// Parses the [`Display`](fmt::Display) form, e.g. `resize:32x32` or `brightness:-10`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || ImagingError::InvalidTransform(format!("cannot parse {s:?}"));
        let (name, arg) = s.split_once(':').unwrap_or((s, ""));
        let spec = match name {
            "grayscale" => Self::Grayscale,
            "mirror" => Self::MirrorHorizontal,
            "resize" => {
                let (w, h) = arg.split_once('x').ok_or_else(bad)?;
                Self::Resize {
                    width: w.parse().map_err(|_| bad())?,
                    height: h.parse().map_err(|_| bad())?,
                }
            }
            "brightness" => Self::BrightnessShift(arg.parse().map_err(|_| bad())?),
            "blur" => Self::BoxBlur(arg.parse().map_err(|_| bad())?),
            "crop" => Self::CenterCrop(arg.parse().map_err(|_| bad())?),
            _ => return Err(bad()),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Applies `t` to `img`, validating its parameters first.
pub fn apply_transform(img: &ImageBuffer, t: &TransformSpec) -> Result<ImageBuffer> {
    t.validate()?;
    match *t {
        TransformSpec::Grayscale => Ok(to_luminance(img)),
        TransformSpec::Resize { width, height } => resize_box(img, width, height),
        TransformSpec::BrightnessShift(delta) => {
            let data = img
                .data
                .iter()
                .map(|&v| (i16::from(v) + delta).clamp(0, 255) as u8)
                .collect();
            ImageBuffer::new(img.width, img.height, img.channels, data)
        }
        TransformSpec::BoxBlur(radius) => Ok(box_blur(img, usize::from(radius))),
        TransformSpec::CenterCrop(fraction) => {
            let crop = |len: usize| ((fraction * len as f64 + 1e-9).floor() as usize).max(1);
            let (w, h) = (crop(img.width), crop(img.height));
            let (x0, y0) = ((img.width - w) / 2, (img.height - h) / 2);
            let ch = img.channels;
            let mut data = Vec::with_capacity(w * h * ch);
            for y in y0..y0 + h {
                let start = (y * img.width + x0) * ch;
                data.extend_from_slice(&img.data[start..start + w * ch]);
            }
            ImageBuffer::new(w, h, ch, data)
        }
        TransformSpec::MirrorHorizontal => {
            let ch = img.channels;
            let mut data = Vec::with_capacity(img.data.len());
            for row in img.data.chunks_exact(img.width * ch) {
                for px in row.chunks_exact(ch).rev() {
                    data.extend_from_slice(px);
                }
            }
            ImageBuffer::new(img.width, img.height, ch, data)
        }
    }
}

/// Mean over the in-bounds part of each window; windows shrink at the borders.
fn box_blur(img: &ImageBuffer, radius: usize) -> ImageBuffer {
    let (w, h, ch) = (img.width, img.height, img.channels);
    let mut data = Vec::with_capacity(img.data.len());
    for y in 0..h {
        let (y_lo, y_hi) = (y.saturating_sub(radius), (y + radius).min(h - 1));
        for x in 0..w {
            let (x_lo, x_hi) = (x.saturating_sub(radius), (x + radius).min(w - 1));
            let count = ((y_hi - y_lo + 1) * (x_hi - x_lo + 1)) as u32;
            for c in 0..ch {
                let mut sum = 0u32;
                for yy in y_lo..=y_hi {
                    for xx in x_lo..=x_hi {
                        sum += u32::from(img.data[(yy * w + xx) * ch + c]);
                    }
                }
                data.push(((2 * sum + count) / (2 * count)) as u8);
            }
        }
    }
    ImageBuffer {
        width: w,
        height: h,
        channels: ch,
        data,
    }
}
