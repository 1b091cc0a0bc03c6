//! IDX (MNIST-style) image and label files. All header integers are big-endian.

use std::path::Path;

use super::LabeledDataset;
use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, offset: usize, message: impl Into<String>) -> Error {
        Error::Ingestion {
            path: self.path.to_path_buf(),
            offset: offset as u64,
            message: message.into(),
        }
    }

    fn be_u32(&mut self) -> Result<u32> {
        let end = self.pos + 4;
        let chunk = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| self.err(self.pos, "truncated header"))?;
        self.pos = end;
        Ok(u32::from_be_bytes(chunk.try_into().unwrap()))
    }

    fn rest(&self, expected: usize) -> Result<&'a [u8]> {
        let available = self.bytes.len() - self.pos;
        if available < expected {
            return Err(self.err(
                self.bytes.len(),
                format!("truncated payload: expected {expected} bytes, found {available}"),
            ));
        }
        if available > expected {
            return Err(self.err(self.pos + expected, "unexpected trailing bytes"));
        }
        Ok(&self.bytes[self.pos..])
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

/// Loads an image/label IDX pair. Pixels are scaled to `[0, 1]`; samples
/// have shape `[rows, cols, 1]`, and the class count is `max(label) + 1`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let image_bytes = read(images_path)?;
    let label_bytes = read(labels_path)?;

    let mut images = Cursor {
        path: images_path,
        bytes: &image_bytes,
        pos: 0,
    };
    let magic = images.be_u32()?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(images.err(0, format!("bad image magic {magic:#010x}")));
    }
    let count = images.be_u32()? as usize;
    let rows = images.be_u32()? as usize;
    let cols = images.be_u32()? as usize;
    let pixels = images.rest(count * rows * cols)?;

    let mut labels = Cursor {
        path: labels_path,
        bytes: &label_bytes,
        pos: 0,
    };
    let magic = labels.be_u32()?;
    if magic != IDX_LABELS_MAGIC {
        return Err(labels.err(0, format!("bad label magic {magic:#010x}")));
    }
    let label_count = labels.be_u32()? as usize;
    if label_count != count {
        return Err(labels.err(
            4,
            format!("label count {label_count} does not match image count {count}"),
        ));
    }
    let raw_labels = labels.rest(count)?;
    if count == 0 {
        return Err(images.err(4, "no samples"));
    }

    let features = pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    let labels: Vec<usize> = raw_labels.iter().map(|&l| usize::from(l)).collect();
    let num_classes = labels.iter().copied().max().unwrap_or(0) + 1;
    LabeledDataset::new(vec![rows, cols, 1], features, labels, num_classes)
}
