//! File formats: PFT pixel-field tensors and 8-bit PNM images.
//!
//! A PFT file is one JSON header line `{"h":H,"w":W,"c":C,"dtype":"f32"}`
//! followed by `H*W*C` little-endian `f32` values in row-major order.

use std::fs;
use std::io::Write;
use std::path::Path;

use image::{DynamicImage, GrayImage};
use serde::{Deserialize, Serialize};

use crate::constraints::SuperpixelMap;
use crate::error::{Error, Result};
use crate::grid::{LabelMap, LogitField, ProbField, Shape};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PftHeader {
    h: usize,
    w: usize,
    c: usize,
    dtype: String,
}

/// Raw contents of a PFT file.
#[derive(Debug, Clone, PartialEq)]
pub struct Pft {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Pft {
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let newline =
            bytes.iter().position(|&b| b == b'\n').ok_or_else(|| Error::parse(path, "missing header line"))?;
        let header: PftHeader =
            serde_json::from_slice(&bytes[..newline]).map_err(|e| Error::parse(path, format!("bad header: {e}")))?;
        if header.dtype != "f32" {
            return Err(Error::parse(path, format!("unsupported dtype `{}`", header.dtype)));
        }
        let count = header.h * header.w * header.c;
        let body = &bytes[newline + 1..];
        if body.len() != count * 4 {
            return Err(Error::parse(
                path,
                format!(
                    "expected {} bytes of data for {}x{}x{}, found {}",
                    count * 4,
                    header.h,
                    header.w,
                    header.c,
                    body.len()
                ),
            ));
        }
        let data = body.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        Ok(Self { height: header.h, width: header.w, channels: header.c, data })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header =
            serde_json::to_string(&PftHeader { h: self.height, w: self.width, c: self.channels, dtype: "f32".into() })
                .unwrap();
        let mut out = Vec::with_capacity(header.len() + 1 + self.data.len() * 4);
        out.extend_from_slice(header.as_bytes());
        out.push(b'\n');
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_bytes(path, &self.to_bytes())
    }

    fn shape(&self) -> Shape {
        Shape::new(self.height, self.width, self.channels)
    }
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub fn read_logits(path: &Path) -> Result<LogitField> {
    let pft = Pft::read(path)?;
    LogitField::new(pft.shape(), pft.data.iter().map(|&v| v as f64).collect())
}

pub fn write_logits(path: &Path, logits: &LogitField) -> Result<()> {
    let s = logits.shape();
    Pft {
        height: s.height,
        width: s.width,
        channels: s.classes,
        data: logits.data().iter().map(|&v| v as f32).collect(),
    }
    .write(path)
}

/// Reads a probability field. Values are stored as `f32`, so each pixel is
/// renormalized after widening.
pub fn read_probs(path: &Path) -> Result<ProbField> {
    let pft = Pft::read(path)?;
    let mut data: Vec<f64> = pft.data.iter().map(|&v| v as f64).collect();
    for (p, px) in data.chunks_exact_mut(pft.channels.max(1)).enumerate() {
        if px.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::parse(path, format!("invalid probability at pixel {p}")));
        }
        let sum: f64 = px.iter().sum();
        if (sum - 1.0).abs() > 1e-4 {
            return Err(Error::parse(path, format!("pixel {p} sums to {sum}")));
        }
        px.iter_mut().for_each(|v| *v /= sum);
    }
    ProbField::new(pft.shape(), data)
}

pub fn write_probs(path: &Path, probs: &ProbField) -> Result<()> {
    let s = probs.shape();
    Pft {
        height: s.height,
        width: s.width,
        channels: s.classes,
        data: probs.data().iter().map(|&v| v as f32).collect(),
    }
    .write(path)
}

/// Reads a `C = 1` PFT of superpixel indices and re-indexes them to
/// `[0, K)`.
pub fn read_superpixels(path: &Path, height: usize, width: usize) -> Result<SuperpixelMap> {
    let pft = Pft::read(path)?;
    if pft.channels != 1 || pft.height != height || pft.width != width {
        return Err(Error::parse(
            path,
            format!("superpixel map is {}x{}x{}, expected {height}x{width}x1", pft.height, pft.width, pft.channels),
        ));
    }
    let mut raw = Vec::with_capacity(pft.data.len());
    for (p, &v) in pft.data.iter().enumerate() {
        if v < 0.0 || v.fract() != 0.0 || !v.is_finite() || v > u32::MAX as f32 {
            return Err(Error::parse(path, format!("superpixel index {v} at pixel {p} is not a non-negative integer")));
        }
        raw.push(v as u32);
    }
    SuperpixelMap::from_raw(height, width, &raw)
}

pub fn write_superpixels(path: &Path, sp: &SuperpixelMap) -> Result<()> {
    Pft { height: sp.height(), width: sp.width(), channels: 1, data: sp.as_slice().iter().map(|&v| v as f32).collect() }
        .write(path)
}

/// A float image with channels in `[0, 1]`, row-major, channel innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 || data.len() != height * width * channels {
            return Err(Error::shape(format!(
                "image data length {} does not match {height}x{width}x{channels}",
                data.len()
            )));
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn pixel(&self, i: usize, j: usize) -> &[f64] {
        let k = (i * self.width + j) * self.channels;
        &self.data[k..k + self.channels]
    }

    fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    }
}

fn decode_pnm(path: &Path) -> Result<DynamicImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    image::load_from_memory_with_format(&bytes, image::ImageFormat::Pnm).map_err(|e| Error::parse(path, e.to_string()))
}

/// Reads a PGM (P5) or PPM (P6) image.
pub fn read_image(path: &Path) -> Result<Image> {
    let img = decode_pnm(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, raw) = match img {
        DynamicImage::ImageLuma8(g) => (1, g.into_raw()),
        DynamicImage::ImageRgb8(c) => (3, c.into_raw()),
        other => (3, other.to_rgb8().into_raw()),
    };
    Image::new(h, w, channels, raw.into_iter().map(|b| b as f64 / 255.0).collect())
}

pub fn write_image(path: &Path, img: &Image) -> Result<()> {
    let color = match img.channels {
        1 => image::ExtendedColorType::L8,
        3 => image::ExtendedColorType::Rgb8,
        c => return Err(Error::invalid(format!("cannot write a {c}-channel image as PNM"))),
    };
    let mut buf = Vec::new();
    image::codecs::pnm::PnmEncoder::new(&mut buf)
        .encode(&img.to_bytes()[..], img.width as u32, img.height as u32, color)
        .map_err(|e| Error::parse(path, e.to_string()))?;
    write_bytes(path, &buf)
}

/// Reads a P5 mask whose pixel values are class indices.
pub fn read_mask(path: &Path) -> Result<LabelMap> {
    let img = decode_pnm(path)?;
    let DynamicImage::ImageLuma8(g) = img else {
        return Err(Error::parse(path, "mask must be an 8-bit grayscale PGM"));
    };
    let (w, h) = (g.width() as usize, g.height() as usize);
    LabelMap::new(h, w, g.into_raw())
}

pub fn write_mask(path: &Path, mask: &LabelMap) -> Result<()> {
    write_bytes(path, &mask_to_pgm(mask))
}

/// P5 encoding of a mask.
pub fn mask_to_pgm(mask: &LabelMap) -> Vec<u8> {
    let mut buf = Vec::new();
    let img = GrayImage::from_raw(mask.width() as u32, mask.height() as u32, mask.as_slice().to_vec()).unwrap();
    image::codecs::pnm::PnmEncoder::new(&mut buf)
        .with_subtype(image::codecs::pnm::PnmSubtype::Graymap(image::codecs::pnm::SampleEncoding::Binary))
        .encode(img.as_raw().as_slice(), img.width(), img.height(), image::ExtendedColorType::L8)
        .unwrap();
    buf
}
