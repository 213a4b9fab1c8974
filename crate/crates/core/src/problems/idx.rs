//! IDX (MNIST-style) binary files: big-endian magic, big-endian dimension
//! sizes, then raw unsigned bytes.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::dataset::Dataset;
use crate::error::{Error, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

/// Raw image tensor as stored on disk.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    /// One feature row per image, scaled to `[0, 1]`.
    pub fn to_features(&self) -> Array2<f64> {
        let d = self.rows * self.cols;
        Array2::from_shape_fn((self.count, d), |(r, c)| self.pixels[r * d + c] as f64 / 255.0)
    }
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn u32_be(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn take(&mut self, len: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < len {
            return Err(Error::Truncated {
                path: self.path.to_path_buf(),
                detail: format!(
                    "needed {len} bytes for {what} at offset {}, only {} left",
                    self.pos,
                    self.bytes.len() - self.pos
                ),
            });
        }
        let out = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }

    fn magic(&mut self, expected: u32) -> Result<()> {
        let found = self.u32_be("magic")?;
        if found != expected {
            return Err(Error::BadMagic {
                path: self.path.to_path_buf(),
                expected,
                found,
            });
        }
        Ok(())
    }
}

pub fn read_idx_images(path: impl AsRef<Path>) -> Result<IdxImages> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let mut cur = Cursor {
        path,
        bytes: &bytes,
        pos: 0,
    };
    cur.magic(IMAGE_MAGIC)?;
    let count = cur.u32_be("image count")? as usize;
    let rows = cur.u32_be("row count")? as usize;
    let cols = cur.u32_be("column count")? as usize;
    let pixels = cur.take(count * rows * cols, "pixel data")?.to_vec();
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels,
    })
}

pub fn read_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let mut cur = Cursor {
        path,
        bytes: &bytes,
        pos: 0,
    };
    cur.magic(LABEL_MAGIC)?;
    let count = cur.u32_be("label count")? as usize;
    Ok(cur.take(count, "label data")?.to_vec())
}

/// Feature matrix of an image file, flattened and scaled to `[0, 1]`.
pub fn load_idx_images(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    Ok(read_idx_images(path)?.to_features())
}

/// Image and label files as one classification dataset. `limit` keeps only
/// the first `limit` samples.
pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>, limit: Option<usize>) -> Result<Dataset> {
    let imgs = read_idx_images(images)?;
    let labs = read_idx_labels(labels)?;
    if imgs.count != labs.len() {
        return Err(Error::InvalidInput(format!(
            "{} images but {} labels",
            imgs.count,
            labs.len()
        )));
    }
    let keep = limit.unwrap_or(imgs.count).min(imgs.count);
    let mut features = imgs.to_features();
    if keep < imgs.count {
        features = features.slice(ndarray::s![..keep, ..]).to_owned();
    }
    let labels = labs[..keep].iter().map(|&l| l as usize).collect();
    Dataset::new(features, labels, None)
}

pub fn write_idx_images(path: impl AsRef<Path>, images: &IdxImages) -> Result<()> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    out.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    for dim in [images.count, images.rows, images.cols] {
        out.extend_from_slice(&(dim as u32).to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    fs::write(path, out)?;
    Ok(())
}

pub fn write_idx_labels(path: impl AsRef<Path>, labels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    fs::write(path, out)?;
    Ok(())
}
