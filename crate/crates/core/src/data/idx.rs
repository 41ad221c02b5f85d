//! Big-endian IDX files as used by MNIST: `0x00000803` image tensors
//! `(n, rows, cols)` of `u8`, and `0x00000801` label vectors `(n)`.

use std::fs;
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Vector;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(buf: &[u8], offset: usize, what: &str) -> Result<u32> {
    buf.get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::Format {
            offset,
            message: format!("{what}: truncated header"),
        })
}

/// Parses in-memory image and label files. Pixels are scaled by `1/255`.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let magic = be_u32(images, 0, "images")?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("images: bad magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}"),
        });
    }
    let n = be_u32(images, 4, "images")? as usize;
    let rows = be_u32(images, 8, "images")? as usize;
    let cols = be_u32(images, 12, "images")? as usize;
    let dim = rows * cols;
    let need = 16 + n * dim;
    if images.len() < need {
        return Err(Error::Format {
            offset: images.len(),
            message: format!("images: truncated pixel data, expected {need} bytes"),
        });
    }

    let magic = be_u32(labels, 0, "labels")?;
    if magic != LABELS_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("labels: bad magic {magic:#010x}, expected {LABELS_MAGIC:#010x}"),
        });
    }
    let m = be_u32(labels, 4, "labels")? as usize;
    if m != n {
        return Err(Error::Format {
            offset: 4,
            message: format!("labels: count {m} differs from image count {n}"),
        });
    }
    if labels.len() < 8 + n {
        return Err(Error::Format {
            offset: labels.len(),
            message: format!("labels: truncated label data, expected {} bytes", 8 + n),
        });
    }

    let inputs = images[16..need]
        .chunks_exact(dim.max(1))
        .take(n)
        .map(|px| Vector::new(px.iter().map(|&b| f64::from(b) / 255.0).collect()))
        .collect();
    let labels: Vec<usize> = labels[8..8 + n].iter().map(|&b| b as usize).collect();
    let classes = labels.iter().max().map_or(0, |&y| y + 1);
    Dataset::new(inputs, labels, classes)
}

pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images = fs::read(images_path)?;
    let labels = fs::read(labels_path)?;
    parse_idx(&images, &labels)
}

/// Writes a dataset as IDX, quantizing each input value to `round(255·v)`.
pub fn write_idx(
    ds: &Dataset,
    rows: usize,
    cols: usize,
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<()> {
    if rows * cols != ds.dim() {
        return Err(Error::dim("idx image shape", ds.dim(), rows * cols));
    }
    let mut img = Vec::with_capacity(16 + ds.len() * ds.dim());
    img.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    for v in [ds.len(), rows, cols] {
        img.extend_from_slice(&(v as u32).to_be_bytes());
    }
    for x in ds.inputs() {
        img.extend(x.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    let mut lab = Vec::with_capacity(8 + ds.len());
    lab.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(ds.len() as u32).to_be_bytes());
    for &y in ds.labels() {
        let b = u8::try_from(y).map_err(|_| Error::Domain(format!("label {y} does not fit in a byte")))?;
        lab.push(b);
    }
    fs::write(images_path, img)?;
    fs::write(labels_path, lab)?;
    Ok(())
}
