//! Planar floating-point images and their file boundary.
//!
//! Pixels live in `[0, 1]` as `f64` everywhere inside the crate; 8-bit
//! quantization only happens in [`save_image`].

use std::fs::File;
use std::io::{BufReader, BufWriter, Read};
use std::path::Path;

use crate::error::{ensure_arg, Error, Result};

/// A planar, row-major raster with 1 (gray) or 3 (RGB) channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    /// Builds an image from planar samples. Samples must be finite and in `[0, 1]`.
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        ensure_arg!(width >= 1 && height >= 1, "image dims must be >= 1, got {width}x{height}");
        ensure_arg!(channels == 1 || channels == 3, "channels must be 1 or 3, got {channels}");
        ensure_arg!(
            data.len() == width * height * channels,
            "data length {} != {width}x{height}x{channels}",
            data.len()
        );
        ensure_arg!(
            data.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)),
            "samples must be finite and within [0, 1]"
        );
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    /// Builds an image, clamping every sample into `[0, 1]` (NaN maps to 0).
    pub fn from_clamped(width: usize, height: usize, channels: usize, mut data: Vec<f64>) -> Result<Self> {
        for v in &mut data {
            *v = clamp01(*v);
        }
        Self::new(width, height, channels, data)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    /// Grayscale image from `f(x, y)`, clamped.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::from_clamped(width, height, 1, data)
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// Applies `f` independently to every plane, producing planes of the same size.
    pub(crate) fn map_planes(&self, mut f: impl FnMut(&[f64]) -> Vec<f64>) -> Image {
        let mut data = Vec::with_capacity(self.data.len());
        for c in 0..self.channels {
            data.extend(f(self.plane(c)));
        }
        let mut out = Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data,
        };
        out.clamp_in_place();
        out
    }

    pub(crate) fn clamp_in_place(&mut self) {
        for v in &mut self.data {
            *v = clamp01(*v);
        }
    }

    /// Rectangular crop.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Image> {
        ensure_arg!(w >= 1 && h >= 1, "crop size must be >= 1");
        ensure_arg!(
            x0 + w <= self.width && y0 + h <= self.height,
            "crop {w}x{h}+{x0}+{y0} exceeds {}x{}",
            self.width,
            self.height
        );
        let mut data = Vec::with_capacity(w * h * self.channels);
        for c in 0..self.channels {
            let p = self.plane(c);
            for y in y0..y0 + h {
                data.extend_from_slice(&p[y * self.width + x0..y * self.width + x0 + w]);
            }
        }
        Ok(Image {
            width: w,
            height: h,
            channels: self.channels,
            data,
        })
    }

    /// Largest centered crop whose dimensions are multiples of `k`.
    pub fn center_crop_to_multiple(&self, k: usize) -> Result<Image> {
        ensure_arg!(k >= 1, "multiple must be >= 1");
        let w = self.width / k * k;
        let h = self.height / k * k;
        ensure_arg!(w >= k && h >= k, "image {}x{} smaller than {k}", self.width, self.height);
        self.crop((self.width - w) / 2, (self.height - h) / 2, w, h)
    }
}

pub(crate) fn clamp01(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

/// Float sample to byte: `round(s * 255)` (half away from zero), clamped.
pub fn quantize_u8(s: f64) -> u8 {
    (clamp01(s) * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Loads a PNG (8/16-bit gray or RGB) or a PGM (P2/P5) image.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|f| BufReader::new(f).read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let decode_err = |reason: String| Error::Decode {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.starts_with(b"\x89PNG") {
        decode_png(&bytes).map_err(decode_err)
    } else if bytes.starts_with(b"P2") || bytes.starts_with(b"P5") {
        decode_pgm(&bytes).map_err(decode_err)
    } else {
        Err(decode_err("unrecognized format (expected PNG or PGM)".into()))
    }
}

fn decode_png(bytes: &[u8]) -> std::result::Result<Image, String> {
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = decoder.read_info().map_err(|e| e.to_string())?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or("image too large")?];
    let info = reader.next_frame(&mut buf).map_err(|e| e.to_string())?;
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => return Err(format!("unsupported PNG color type {other:?}")),
    };
    let (w, h) = (info.width as usize, info.height as usize);
    let samples: Vec<f64> = match info.bit_depth {
        png::BitDepth::Eight => buf[..w * h * channels].iter().map(|&b| b as f64 / 255.0).collect(),
        png::BitDepth::Sixteen => buf[..w * h * channels * 2]
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 / 65535.0)
            .collect(),
        other => return Err(format!("unsupported PNG bit depth {other:?}")),
    };
    Image::new(w, h, channels, interleaved_to_planar(&samples, w * h, channels)).map_err(|e| e.to_string())
}

fn interleaved_to_planar(samples: &[f64], pixels: usize, channels: usize) -> Vec<f64> {
    let mut out = vec![0.0; pixels * channels];
    for (i, px) in samples.chunks_exact(channels).enumerate() {
        for (c, &v) in px.iter().enumerate() {
            out[c * pixels + i] = v;
        }
    }
    out
}

fn decode_pgm(bytes: &[u8]) -> std::result::Result<Image, String> {
    let binary = bytes[1] == b'5';
    let mut pos = 2;
    let mut header = [0usize; 3];
    for field in &mut header {
        *field = next_ascii_uint(bytes, &mut pos)?;
    }
    let [w, h, maxval] = header;
    if w == 0 || h == 0 {
        return Err("zero image dimension".into());
    }
    if maxval == 0 || maxval > 65535 {
        return Err(format!("unsupported PGM maxval {maxval}"));
    }
    let n = w * h;
    let mut raw = Vec::with_capacity(n);
    if binary {
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        let width = if maxval < 256 { 1 } else { 2 };
        let body = bytes.get(pos..pos + n * width).ok_or("truncated PGM raster")?;
        if width == 1 {
            raw.extend(body.iter().map(|&b| b as usize));
        } else {
            raw.extend(body.chunks_exact(2).map(|b| u16::from_be_bytes([b[0], b[1]]) as usize));
        }
    } else {
        for _ in 0..n {
            raw.push(next_ascii_uint(bytes, &mut pos)?);
        }
    }
    if raw.iter().any(|&v| v > maxval) {
        return Err("sample exceeds maxval".into());
    }
    let data = raw.into_iter().map(|v| v as f64 / maxval as f64).collect();
    Image::new(w, h, 1, data).map_err(|e| e.to_string())
}

fn next_ascii_uint(bytes: &[u8], pos: &mut usize) -> std::result::Result<usize, String> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err("unexpected end of PGM data".into()),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(u8::is_ascii_digit) {
        *pos += 1;
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| format!("expected unsigned integer at byte {start}"))
}

/// Writes an 8-bit PNG (grayscale for one channel, RGB for three).
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), img.width as u32, img.height as u32);
    encoder.set_color(if img.channels == 1 {
        png::ColorType::Grayscale
    } else {
        png::ColorType::Rgb
    });
    encoder.set_depth(png::BitDepth::Eight);
    let n = img.width * img.height;
    let mut bytes = Vec::with_capacity(n * img.channels);
    for i in 0..n {
        for c in 0..img.channels {
            bytes.push(quantize_u8(img.data[c * n + i]));
        }
    }
    let to_io = |e: png::EncodingError| Error::io(path, std::io::Error::other(e));
    let mut writer = encoder.write_header().map_err(to_io)?;
    writer.write_image_data(&bytes).map_err(to_io)?;
    writer.finish().map_err(to_io)
}

/// BT.601 studio-swing luma. Grayscale input is returned unchanged.
pub fn to_luma(img: &Image) -> Image {
    if img.channels == 1 {
        return img.clone();
    }
    let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
    let data = r
        .iter()
        .zip(g)
        .zip(b)
        .map(|((&r, &g), &b)| clamp01((65.481 * r + 128.553 * g + 24.966 * b + 16.0) / 255.0))
        .collect();
    Image {
        width: img.width,
        height: img.height,
        channels: 1,
        data,
    }
}
