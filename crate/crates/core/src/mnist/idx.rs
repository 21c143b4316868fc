//! IDX files, optionally gzipped (detected from the first two bytes).

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 2051;
pub const LABELS_MAGIC: u32 = 2049;
pub const SIDE: usize = 28;
pub const PIXELS: usize = SIDE * SIDE;

/// Images scaled to `[0, 1]` (bytes divided by 255) and their labels.
#[derive(Clone, Debug, PartialEq)]
pub struct MnistDataset {
    pub images: Vec<f32>,
    pub labels: Vec<u8>,
}

impl MnistDataset {
    pub fn new(images: Vec<f32>, labels: Vec<u8>) -> Result<Self> {
        if images.len() != labels.len() * PIXELS {
            return Err(Error::InvalidArgument(format!(
                "{} pixel values for {} labels",
                images.len(),
                labels.len()
            )));
        }
        if let Some(l) = labels.iter().find(|&&l| l > 9) {
            return Err(Error::InvalidArgument(format!("label {l} outside 0..=9")));
        }
        Ok(MnistDataset { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        &self.images[i * PIXELS..(i + 1) * PIXELS]
    }

    pub fn subset(&self, indices: &[usize]) -> MnistDataset {
        let mut images = Vec::with_capacity(indices.len() * PIXELS);
        for &i in indices {
            images.extend_from_slice(self.image(i));
        }
        MnistDataset {
            images,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// The first `n` examples.
    pub fn head(&self, n: usize) -> MnistDataset {
        let n = n.min(self.len());
        MnistDataset {
            images: self.images[..n * PIXELS].to_vec(),
            labels: self.labels[..n].to_vec(),
        }
    }

    /// Loads `{prefix}-images-idx3-ubyte[.gz]` and `{prefix}-labels-idx1-ubyte[.gz]`
    /// from `dir`; `prefix` is `train` or `t10k`.
    pub fn load_split(dir: &Path, prefix: &str) -> Result<MnistDataset> {
        let images = find(dir, &format!("{prefix}-images-idx3-ubyte"))?;
        let labels = find(dir, &format!("{prefix}-labels-idx1-ubyte"))?;
        parse_idx(&images, &labels)
    }
}

fn find(dir: &Path, stem: &str) -> Result<PathBuf> {
    for name in [format!("{stem}.gz"), stem.to_string()] {
        let p = dir.join(name);
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(Error::Io(std::io::Error::new(
        std::io::ErrorKind::NotFound,
        format!("{stem}[.gz] not found in {}", dir.display()),
    )))
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..]).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn parse_err(offset: usize, detail: impl Into<String>) -> Error {
    Error::Parse {
        offset: offset as u64,
        detail: detail.into(),
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| parse_err(bytes.len(), "truncated header"))
}

/// Pixel bytes of an images file.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, Vec<u8>)> {
    let magic = be_u32(bytes, 0)?;
    if magic != IMAGES_MAGIC {
        return Err(parse_err(0, format!("expected images magic {IMAGES_MAGIC}, found {magic}")));
    }
    let n = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    if rows != SIDE || cols != SIDE {
        return Err(parse_err(8, format!("expected {SIDE}x{SIDE} images, found {rows}x{cols}")));
    }
    let body = &bytes[16..];
    if body.len() != n * PIXELS {
        return Err(parse_err(
            16 + body.len().min(n * PIXELS),
            format!("expected {} pixel bytes, found {}", n * PIXELS, body.len()),
        ));
    }
    Ok((n, body.to_vec()))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0)?;
    if magic != LABELS_MAGIC {
        return Err(parse_err(0, format!("expected labels magic {LABELS_MAGIC}, found {magic}")));
    }
    let n = be_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(parse_err(
            8 + body.len().min(n),
            format!("expected {n} label bytes, found {}", body.len()),
        ));
    }
    if let Some(i) = body.iter().position(|&l| l > 9) {
        return Err(parse_err(8 + i, format!("label {} outside 0..=9", body[i])));
    }
    Ok(body.to_vec())
}

pub fn parse_idx(images: &Path, labels: &Path) -> Result<MnistDataset> {
    let (n, px) = parse_idx_images(&read_maybe_gz(images)?)?;
    let labels = parse_idx_labels(&read_maybe_gz(labels)?)?;
    if labels.len() != n {
        return Err(parse_err(4, format!("{n} images but {} labels", labels.len())));
    }
    MnistDataset::new(px.into_iter().map(|b| b as f32 / 255.0).collect(), labels)
}

fn encode(magic: u32, dims: &[u32], body: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * dims.len() + body.len());
    out.extend_from_slice(&magic.to_be_bytes());
    for d in dims {
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(body);
    out
}

fn write_maybe_gz(path: &Path, bytes: &[u8]) -> Result<()> {
    if path.extension().is_some_and(|e| e == "gz") {
        let mut enc = GzEncoder::new(fs::File::create(path)?, Compression::default());
        enc.write_all(bytes)?;
        enc.finish()?;
    } else {
        fs::write(path, bytes)?;
    }
    Ok(())
}

/// Writes both files; pixels are rounded back to bytes. A `.gz` extension
/// selects gzip.
pub fn write_idx(data: &MnistDataset, images: &Path, labels: &Path) -> Result<()> {
    let px: Vec<u8> = data.images.iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect();
    let n = data.len() as u32;
    write_maybe_gz(images, &encode(IMAGES_MAGIC, &[n, SIDE as u32, SIDE as u32], &px))?;
    write_maybe_gz(labels, &encode(LABELS_MAGIC, &[n], &data.labels))
}
