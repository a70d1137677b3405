use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const LABEL_MAGIC: [u8; 4] = *b"PLB\0";

/// Id stored for pixels without a class.
pub const UNLABELED: u8 = 0;

/// Per-pixel class ids in `1..=num_classes`, with 0 reserved for "unlabeled".
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    num_classes: u8,
    labels: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, num_classes: u8, labels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid(format!("empty label map {height}x{width}")));
        }
        if num_classes == 0 {
            return Err(Error::invalid("label map needs at least one class"));
        }
        if labels.len() != height * width {
            return Err(Error::invalid(format!(
                "label buffer has {} entries, expected {}",
                labels.len(),
                height * width
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l > num_classes) {
            return Err(Error::invariant(format!(
                "label {bad} exceeds class count {num_classes}"
            )));
        }
        Ok(Self {
            height,
            width,
            num_classes,
            labels,
        })
    }

    /// A fully unlabeled map.
    pub fn unlabeled(height: usize, width: usize, num_classes: u8) -> Result<Self> {
        Self::new(height, width, num_classes, vec![UNLABELED; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_classes(&self) -> u8 {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.labels[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, label: u8) -> Result<()> {
        if label > self.num_classes {
            return Err(Error::invariant(format!(
                "label {label} exceeds class count {}",
                self.num_classes
            )));
        }
        self.labels[row * self.width + col] = label;
        Ok(())
    }

    /// Flat indices of every labeled pixel, in row-major order.
    pub fn labeled_indices(&self) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l != UNLABELED)
            .map(|(i, _)| i)
            .collect()
    }

    /// Pixel count per class; index 0 holds the unlabeled count.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes as usize + 1];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }

    /// Number of 4-neighbor pairs whose labels differ.
    pub fn discontinuity_count(&self) -> usize {
        let (h, w) = (self.height, self.width);
        let mut count = 0;
        for r in 0..h {
            for c in 0..w {
                let here = self.labels[r * w + c];
                if c + 1 < w && self.labels[r * w + c + 1] != here {
                    count += 1;
                }
                if r + 1 < h && self.labels[(r + 1) * w + c] != here {
                    count += 1;
                }
            }
        }
        count
    }

    pub fn transposed(&self) -> Self {
        let mut out = vec![0u8; self.labels.len()];
        for r in 0..self.height {
            for c in 0..self.width {
                out[c * self.height + r] = self.labels[r * self.width + c];
            }
        }
        Self {
            height: self.width,
            width: self.height,
            num_classes: self.num_classes,
            labels: out,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(13 + self.labels.len());
        buf.extend_from_slice(&LABEL_MAGIC);
        buf.extend_from_slice(&(self.height as u32).to_le_bytes());
        buf.extend_from_slice(&(self.width as u32).to_le_bytes());
        buf.push(self.num_classes);
        buf.extend_from_slice(&self.labels);
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || bytes[..4] != LABEL_MAGIC {
            return Err(Error::format("bad magic: not a PLB label file"));
        }
        if bytes.len() < 13 {
            return Err(Error::format("truncated label header"));
        }
        let height = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let width = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let num_classes = bytes[12];
        let payload = &bytes[13..];
        let expected = height
            .checked_mul(width)
            .ok_or_else(|| Error::format("label dimensions overflow"))?;
        if payload.len() < expected {
            return Err(Error::format(format!(
                "truncated label payload: {} of {expected} bytes",
                payload.len()
            )));
        }
        if payload.len() > expected {
            return Err(Error::format("trailing bytes after label payload"));
        }
        Self::new(height, width, num_classes, payload.to_vec())
    }
}

pub fn save_labels(labels: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, labels.to_bytes())?;
    Ok(())
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelMap> {
    LabelMap::from_bytes(&fs::read(path)?)
}
