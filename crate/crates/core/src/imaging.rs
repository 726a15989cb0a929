//! Spatial filtering, bicubic resizing, and PNG / ITNS file I/O.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::encoders::{ActivityImage, EncoderKind, FilterKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Kernel3x3 {
    pub weights: [[f64; 3]; 3],
    pub name: String,
}

impl Kernel3x3 {
    pub fn new(weights: [[f64; 3]; 3], name: impl Into<String>) -> Result<Self> {
        if weights.iter().flatten().any(|w| !w.is_finite()) {
            return Err(Error::Range("kernel weights must be finite".into()));
        }
        Ok(Self {
            weights,
            name: name.into(),
        })
    }

    /// Horizontal-edge Prewitt kernel.
    pub fn prewitt() -> Self {
        Self {
            weights: [
                [1.0, 1.0, 1.0], //
                [0.0, 0.0, 0.0], //
                [-1.0, -1.0, -1.0],
            ],
            name: "prewitt".into(),
        }
    }

    /// Sharpening kernel with centre 9 and -1 around it.
    pub fn high_boost() -> Self {
        Self::high_boost_with_gain(DEFAULT_HIGH_BOOST_GAIN)
    }

    /// `A * identity - box`, where `box` is the 3x3 neighbourhood sum
    /// (nine times the mean low-pass). `A = 10` gives [`Kernel3x3::high_boost`].
    pub fn high_boost_with_gain(amplification: f64) -> Self {
        let mut weights = [[-1.0; 3]; 3];
        weights[1][1] = amplification - 1.0;
        Self {
            weights,
            name: "highboost".into(),
        }
    }

    pub fn transpose(&self) -> Self {
        let w = &self.weights;
        Self {
            weights: std::array::from_fn(|r| std::array::from_fn(|c| w[c][r])),
            name: format!("{}^T", self.name),
        }
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().flatten().sum()
    }
}

pub const DEFAULT_HIGH_BOOST_GAIN: f64 = 10.0;

/// Unnormalized filter response, one value per pixel and channel, same layout
/// as [`ActivityImage::pixels`].
#[derive(Debug, Clone, PartialEq)]
pub struct RawResponse {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

/// Correlate a `height x width x 3` buffer with the kernel as written (no flip),
/// replicating edge pixels beyond the border.
pub fn correlate3x3(height: usize, width: usize, pixels: &[f64], k: &Kernel3x3) -> RawResponse {
    assert_eq!(pixels.len(), height * width * 3);
    let at = |r: isize, c: isize, ch: usize| {
        let r = r.clamp(0, height as isize - 1) as usize;
        let c = c.clamp(0, width as isize - 1) as usize;
        pixels[(r * width + c) * 3 + ch]
    };
    let weight_sum = k.sum();
    let mut values = Vec::with_capacity(pixels.len());
    for r in 0..height as isize {
        for c in 0..width as isize {
            for ch in 0..3 {
                // offsets from the centre pixel keep flat regions exact
                let centre = at(r, c, ch);
                let mut acc = 0.0;
                for (dr, row) in k.weights.iter().enumerate() {
                    for (dc, w) in row.iter().enumerate() {
                        acc += w * (at(r + dr as isize - 1, c + dc as isize - 1, ch) - centre);
                    }
                }
                values.push(acc + centre * weight_sum);
            }
        }
    }
    RawResponse { height, width, values }
}

/// Min-max map into `[0, 1]` over the whole buffer; a flat response maps to 0.5.
pub fn renormalize(values: &[f64]) -> Vec<f64> {
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    if hi > lo {
        values.iter().map(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0)).collect()
    } else {
        vec![0.5; values.len()]
    }
}

pub fn convolve3x3(img: &ActivityImage, k: &Kernel3x3) -> ActivityImage {
    let raw = correlate3x3(img.height(), img.width(), img.pixels(), k);
    img.with_pixels(img.height(), img.width(), renormalize(&raw.values))
}

pub fn prewitt_modality(img: &ActivityImage) -> ActivityImage {
    let mut out = convolve3x3(img, &Kernel3x3::prewitt());
    out.filter = FilterKind::Prewitt;
    out
}

/// Gradient magnitude of the Prewitt kernel and its transpose.
pub fn prewitt_magnitude_modality(img: &ActivityImage) -> ActivityImage {
    let k = Kernel3x3::prewitt();
    let gy = correlate3x3(img.height(), img.width(), img.pixels(), &k);
    let gx = correlate3x3(img.height(), img.width(), img.pixels(), &k.transpose());
    let mag: Vec<f64> = gy.values.iter().zip(&gx.values).map(|(a, b)| a.hypot(*b)).collect();
    let mut out = img.with_pixels(img.height(), img.width(), renormalize(&mag));
    out.filter = FilterKind::Prewitt;
    out
}

pub fn highboost_modality(img: &ActivityImage) -> ActivityImage {
    highboost_modality_with_gain(img, DEFAULT_HIGH_BOOST_GAIN)
}

pub fn highboost_modality_with_gain(img: &ActivityImage, amplification: f64) -> ActivityImage {
    let mut out = convolve3x3(img, &Kernel3x3::high_boost_with_gain(amplification));
    out.filter = FilterKind::HighBoost;
    out
}

/// Catmull-Rom cubic (a = -0.5).
fn cubic_weight(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// Source taps and weights for each output coordinate along one axis,
/// half-pixel centred, border indices clamped.
fn axis_taps(in_len: usize, out_len: usize) -> Vec<([usize; 4], [f64; 4])> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = (o as f64 + 0.5) * scale - 0.5;
            let base = src.floor();
            let t = src - base;
            let mut idx = [0usize; 4];
            let mut wts = [0.0; 4];
            for k in 0..4 {
                let pos = base as isize + k as isize - 1;
                idx[k] = pos.clamp(0, in_len as isize - 1) as usize;
                wts[k] = cubic_weight(t - (k as f64 - 1.0));
            }
            (idx, wts)
        })
        .collect()
}

/// Separable Catmull-Rom resize, channels independent, output clamped to `[0, 1]`.
pub fn resize_bicubic(img: &ActivityImage, out_h: usize, out_w: usize) -> Result<ActivityImage> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidShape(format!("resize target {out_h}x{out_w}")));
    }
    let (h, w) = (img.height(), img.width());
    let src = img.pixels();
    let col_taps = axis_taps(w, out_w);
    let row_taps = axis_taps(h, out_h);

    // horizontal pass: h x out_w x 3
    let mut tmp = vec![0.0; h * out_w * 3];
    for r in 0..h {
        for (oc, (idx, wts)) in col_taps.iter().enumerate() {
            for ch in 0..3 {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += wts[k] * src[(r * w + idx[k]) * 3 + ch];
                }
                tmp[(r * out_w + oc) * 3 + ch] = acc;
            }
        }
    }
    let mut out = vec![0.0; out_h * out_w * 3];
    for (or, (idx, wts)) in row_taps.iter().enumerate() {
        for oc in 0..out_w {
            for ch in 0..3 {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += wts[k] * tmp[(idx[k] * out_w + oc) * 3 + ch];
                }
                out[(or * out_w + oc) * 3 + ch] = acc.clamp(0.0, 1.0);
            }
        }
    }
    Ok(img.with_pixels(out_h, out_w, out))
}

/// Catmull-Rom weights of the four taps around fractional offset `t`.
pub fn cubic_weights_at(t: f64) -> [f64; 4] {
    std::array::from_fn(|k| cubic_weight(t - (k as f64 - 1.0)))
}

#[inline]
pub fn quantize(v: f64) -> u8 {
    // round half up
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

pub fn write_png(img: &ActivityImage, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), img.width() as u32, img.height() as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
    let bytes: Vec<u8> = img.pixels().iter().map(|&v| quantize(v)).collect();
    writer
        .write_image_data(&bytes)
        .map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
    writer
        .finish()
        .map_err(|e| Error::format(path.display().to_string(), e.to_string()))
}

/// Read an 8-bit PNG back into unit intensities. Grayscale inputs are
/// replicated to three channels and alpha is dropped. Encoder and filter
/// metadata are not stored in the file and come back as `encoder`/`None`.
pub fn read_png(path: &Path, encoder_kind: EncoderKind) -> Result<ActivityImage> {
    let ctx = || path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder.read_info().map_err(|e| Error::format(ctx(), e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format(ctx(), "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::format(ctx(), e.to_string()))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::format(
            ctx(),
            format!("unsupported bit depth {:?}", info.bit_depth),
        ));
    }
    let stride = match info.color_type {
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        other => return Err(Error::format(ctx(), format!("unsupported color type {other:?}"))),
    };
    let (w, h) = (info.width as usize, info.height as usize);
    let mut pixels = Vec::with_capacity(w * h * 3);
    for r in 0..h {
        let line = &buf[r * info.line_size..];
        for c in 0..w {
            let px = &line[c * stride..c * stride + stride];
            if stride >= 3 {
                pixels.extend(px[..3].iter().map(|&b| f64::from(b) / 255.0));
            } else {
                let v = f64::from(px[0]) / 255.0;
                pixels.extend_from_slice(&[v, v, v]);
            }
        }
    }
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    ActivityImage::new(h, w, pixels, encoder_kind, id)
}

/// Dense row-major f64 tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = dims.iter().product();
        if numel != data.len() {
            return Err(Error::InvalidShape(format!(
                "dims {dims:?} hold {numel} values, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }
}

pub const ITNS_MAGIC: &[u8; 4] = b"ITNS";
pub const ITNS_VERSION: u8 = 1;

/// ITNS layout (little-endian):
/// magic `ITNS`, version `u8`, rank `u8`, rank x `u32` dims, then the
/// row-major `f64` payload.
pub fn encode_tensor(t: &Tensor) -> Result<Vec<u8>> {
    let rank = u8::try_from(t.dims.len()).map_err(|_| Error::InvalidShape(format!("rank {} > 255", t.dims.len())))?;
    let mut out = Vec::with_capacity(6 + 4 * t.dims.len() + 8 * t.data.len());
    out.extend_from_slice(ITNS_MAGIC);
    out.push(ITNS_VERSION);
    out.push(rank);
    for &d in &t.dims {
        let d = u32::try_from(d).map_err(|_| Error::InvalidShape(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in &t.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_tensor(bytes: &[u8], context: &str) -> Result<Tensor> {
    let fail = |msg: String| Error::format(context, msg);
    if bytes.len() < 6 {
        return Err(fail(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..4] != ITNS_MAGIC {
        return Err(fail("bad magic".into()));
    }
    if bytes[4] != ITNS_VERSION {
        return Err(fail(format!("unsupported version {}", bytes[4])));
    }
    let rank = bytes[5] as usize;
    let header = 6 + 4 * rank;
    if bytes.len() < header {
        return Err(fail("truncated dimension header".into()));
    }
    let dims: Vec<usize> = bytes[6..header]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let numel = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| fail("dimension product overflows".into()))?;
    let payload = &bytes[header..];
    if Some(payload.len()) != numel.checked_mul(8) {
        return Err(fail(format!(
            "dims {dims:?} need {} payload bytes, found {}",
            numel.saturating_mul(8),
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok(Tensor { dims, data })
}

pub fn write_tensor(t: &Tensor, path: &Path) -> Result<()> {
    let bytes = encode_tensor(t)?;
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes, &path.display().to_string())
}
