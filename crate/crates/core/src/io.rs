//! File formats: weight files, PNG images and label maps.
//!
//! Weight file layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "STDCW1\0\0"
//! count    u64      number of entries
//! entry*   name_len u32, name (UTF-8), rank u32 (1..=4),
//!          dims u64 x rank, payload f32 x prod(dims)
//! ```
//!
//! Entries are written in name order with trailing unit dimensions dropped
//! (a (64, 1, 1, 1) vector is stored with rank 1).

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::detail::LabelMap;
use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::{Shape, Tensor};
use crate::weights::{Schema, WeightStore};

pub const WEIGHT_MAGIC: &[u8; 8] = b"STDCW1\0\0";

pub fn encode_weights(store: &WeightStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHT_MAGIC);
    out.extend_from_slice(&(store.len() as u64).to_le_bytes());
    for (name, t) in store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let dims = t.shape().dims();
        let rank = dims.iter().rposition(|&d| d != 1).map_or(1, |i| i + 1);
        out.extend_from_slice(&(rank as u32).to_le_bytes());
        for &d in &dims[..rank] {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, entry: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated {
                entry: entry.to_string(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, entry: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, entry)?.try_into().unwrap()))
    }

    fn u64(&mut self, entry: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, entry)?.try_into().unwrap()))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

pub fn decode_weights(bytes: &[u8]) -> Result<WeightStore> {
    if bytes.len() < WEIGHT_MAGIC.len() || &bytes[..8] != WEIGHT_MAGIC {
        return Err(Error::BadMagic);
    }
    let mut cur = Cursor { buf: bytes, pos: 8 };
    let count = cur.u64("header")?;
    let mut store = WeightStore::new();
    let mut seen = BTreeSet::new();
    for index in 0..count {
        let label = format!("entry {index}");
        let name_len = cur.u32(&label)? as usize;
        let name = std::str::from_utf8(cur.take(name_len, &label)?)
            .map_err(|_| Error::Malformed {
                entry: label.clone(),
                detail: "name is not valid UTF-8".into(),
            })?
            .to_string();
        if !seen.insert(name.clone()) {
            return Err(Error::DuplicateName { name });
        }
        let malformed = |detail: String| Error::Malformed {
            entry: name.clone(),
            detail,
        };
        let rank = cur.u32(&name)? as usize;
        if !(1..=4).contains(&rank) {
            return Err(malformed(format!("rank {rank} outside 1..=4")));
        }
        let mut dims = [1usize; 4];
        let mut numel = 1usize;
        for d in dims.iter_mut().take(rank) {
            let v = cur.u64(&name)?;
            if v == 0 {
                return Err(malformed("zero dimension".into()));
            }
            *d = usize::try_from(v).map_err(|_| malformed(format!("dimension {v} too large")))?;
            numel = numel
                .checked_mul(*d)
                .ok_or_else(|| malformed("element count overflows".into()))?;
        }
        let bytes_needed = numel
            .checked_mul(4)
            .ok_or_else(|| malformed("payload size overflows".into()))?;
        let payload = cur.take(bytes_needed, &name)?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let [a, b, c, d] = dims;
        store.insert(name, Tensor::new(Shape::new(a, b, c, d), data)?);
    }
    if cur.remaining() != 0 {
        return Err(Error::Malformed {
            entry: "trailer".into(),
            detail: format!("{} unexpected bytes after the last entry", cur.remaining()),
        });
    }
    Ok(store)
}

pub fn save_weights(store: &WeightStore, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_weights(store)).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<WeightStore> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_weights(&bytes)
}

/// Loads a weight file and checks it against a model's schema.
pub fn load_weights_for(path: impl AsRef<Path>, schema: &Schema) -> Result<WeightStore> {
    let store = load_weights(path)?;
    store.validate(schema)?;
    Ok(store)
}

/// Per-channel normalization applied after scaling pixels to [0, 1].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PreprocessSpec {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for PreprocessSpec {
    fn default() -> Self {
        Self {
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
        }
    }
}

impl PreprocessSpec {
    pub fn validate(&self) -> Result<()> {
        if self.std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Config("normalization std must be > 0".into()));
        }
        Ok(())
    }
}

struct Decoded {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<u8>,
}

fn decode_png(path: &Path, expand: bool) -> Result<Decoded> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(if expand {
        png::Transformations::EXPAND | png::Transformations::STRIP_16
    } else {
        png::Transformations::IDENTITY
    });
    let invalid = |e: png::DecodingError| match e {
        png::DecodingError::IoError(io) => Error::io(path, io),
        other => Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::InvalidData, other.to_string()),
        ),
    };
    let mut reader = decoder.read_info().map_err(invalid)?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(invalid)?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Image {
            path: path.into(),
            detail: format!("expected 8-bit samples, got {:?}", info.bit_depth),
        });
    }
    buf.truncate(info.buffer_size());
    Ok(Decoded {
        width: info.width as usize,
        height: info.height as usize,
        channels: info.color_type.samples(),
        pixels: buf,
    })
}

/// Loads an RGB PNG as a (1, 3, H, W) tensor: optional bilinear resize to
/// `target` (height, width), scale to [0, 1], then (x - mean) / std.
pub fn load_image(path: impl AsRef<Path>, spec: &PreprocessSpec, target: Option<(usize, usize)>) -> Result<Tensor> {
    let path = path.as_ref();
    spec.validate()?;
    let img = decode_png(path, true)?;
    if img.channels != 3 {
        return Err(Error::Image {
            path: path.into(),
            detail: format!("expected 3 channels (RGB), got {}", img.channels),
        });
    }
    let (h, w) = (img.height, img.width);
    let t = Tensor::from_fn(Shape::new(1, 3, h, w), |_, c, y, x| {
        img.pixels[(y * w + x) * 3 + c] as f32 / 255.0
    });
    let t = match target {
        Some((th, tw)) if (th, tw) != (h, w) => ops::bilinear_upsample(&t, th, tw)?,
        _ => t,
    };
    let plane = t.shape().plane();
    let mut t = t;
    for (c, chunk) in t.data_mut().chunks_mut(plane).enumerate() {
        let (m, s) = (spec.mean[c], spec.std[c]);
        chunk.iter_mut().for_each(|v| *v = (*v - m) / s);
    }
    Ok(t)
}

/// Nearest-neighbour source index with half-pixel centres.
fn nearest(dst: usize, out_len: usize, in_len: usize) -> usize {
    (((dst as f64 + 0.5) * in_len as f64 / out_len as f64) as usize).min(in_len - 1)
}

/// Nearest-neighbour resize; never produces ids absent from the source.
pub fn resize_labels(labels: &LabelMap, height: usize, width: usize) -> Result<LabelMap> {
    let mut out = LabelMap::from_fn(labels.batch, height, width, |b, y, x| {
        labels.at(
            b,
            nearest(y, height, labels.height),
            nearest(x, width, labels.width),
        )
    });
    out.ignore_label = labels.ignore_label;
    Ok(out)
}

/// Loads a single-channel 8-bit PNG (grayscale or palette indices) as ids.
pub fn load_labels(path: impl AsRef<Path>, target: Option<(usize, usize)>) -> Result<LabelMap> {
    let path = path.as_ref();
    let img = decode_png(path, false)?;
    if img.channels != 1 {
        return Err(Error::Image {
            path: path.into(),
            detail: format!("expected 1 channel, got {}", img.channels),
        });
    }
    let labels = LabelMap::new(
        1,
        img.height,
        img.width,
        img.pixels.iter().map(|&p| p as u32).collect(),
    )?;
    match target {
        Some((h, w)) if (h, w) != (img.height, img.width) => resize_labels(&labels, h, w),
        _ => Ok(labels),
    }
}

fn write_png(path: &Path, width: usize, height: usize, color: png::ColorType, palette: Option<Vec<u8>>, data: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    if let Some(p) = palette {
        enc.set_palette(p);
    }
    let to_io = |e: png::EncodingError| match e {
        png::EncodingError::IoError(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(other.to_string())),
    };
    let mut w = enc.write_header().map_err(to_io)?;
    w.write_image_data(data).map_err(to_io)?;
    w.finish().map_err(to_io)?;
    Ok(())
}

/// Cityscapes colours for the first 19 classes; further entries are derived.
pub fn palette(len: usize) -> Vec<u8> {
    const CITYSCAPES: [[u8; 3]; 19] = [
        [128, 64, 128],
        [244, 35, 232],
        [70, 70, 70],
        [102, 102, 156],
        [190, 153, 153],
        [153, 153, 153],
        [250, 170, 30],
        [220, 220, 0],
        [107, 142, 35],
        [152, 251, 152],
        [70, 130, 180],
        [220, 20, 60],
        [255, 0, 0],
        [0, 0, 142],
        [0, 0, 70],
        [0, 60, 100],
        [0, 80, 100],
        [0, 0, 230],
        [119, 11, 32],
    ];
    (0..len)
        .flat_map(|i| match CITYSCAPES.get(i) {
            Some(c) => *c,
            None => {
                let v = i as u8;
                [v.wrapping_mul(37), v.wrapping_mul(91), v.wrapping_mul(173)]
            }
        })
        .collect()
}

/// Writes ids (< 256) as an indexed PNG whose palette index is the id.
pub fn save_label_png(path: impl AsRef<Path>, width: usize, height: usize, ids: &[u32]) -> Result<()> {
    let path = path.as_ref();
    if ids.len() != width * height {
        return Err(Error::shape("save_label_png", format!("{} ids for {width}x{height}", ids.len())));
    }
    let max = ids.iter().copied().max().unwrap_or(0);
    if max > 255 {
        return Err(Error::Config(format!("label id {max} does not fit an indexed PNG")));
    }
    let data: Vec<u8> = ids.iter().map(|&i| i as u8).collect();
    write_png(path, width, height, png::ColorType::Indexed, Some(palette(max as usize + 1)), &data)
}

/// Writes 8-bit grayscale pixels.
pub fn save_gray_png(path: impl AsRef<Path>, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    let path = path.as_ref();
    if pixels.len() != width * height {
        return Err(Error::shape("save_gray_png", format!("{} pixels for {width}x{height}", pixels.len())));
    }
    write_png(path, width, height, png::ColorType::Grayscale, None, pixels)
}

/// Writes an RGB image; used by tests and tooling to produce inputs.
pub fn save_rgb_png(path: impl AsRef<Path>, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    let path = path.as_ref();
    if pixels.len() != width * height * 3 {
        return Err(Error::shape("save_rgb_png", format!("{} bytes for {width}x{height} RGB", pixels.len())));
    }
    write_png(path, width, height, png::ColorType::Rgb, None, pixels)
}

/// Writes one map of a {0, 1} (batch, 1, H, W) tensor as a 0/255 PNG.
pub fn save_binary_map_png(path: impl AsRef<Path>, map: &Tensor, batch_index: usize) -> Result<()> {
    let s = map.shape();
    let pixels: Vec<u8> = map
        .plane(batch_index, 0)
        .iter()
        .map(|&v| if v > 0.5 { 255 } else { 0 })
        .collect();
    save_gray_png(path, s.width, s.height, &pixels)
}
