use std::fs;
use std::path::Path;

use ndarray::{Array3, ArrayView1, ArrayView3};

use crate::error::{Error, Result};

pub const FEATURE_MAGIC: [u8; 4] = *b"PFC1";

/// Real feature tensor laid out as (height, width, channel).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCube {
    data: Array3<f64>,
}

impl FeatureCube {
    /// Wrap an array, rejecting empty shapes and non-finite values.
    pub fn from_array(data: Array3<f64>) -> Result<Self> {
        let (h, w, c) = data.dim();
        if h == 0 || w == 0 || c == 0 {
            return Err(Error::invalid(format!("empty feature cube {h}x{w}x{c}")));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invariant(format!(
                "non-finite feature value at flat index {pos}"
            )));
        }
        Ok(Self { data })
    }

    pub(crate) fn from_array_unchecked(data: Array3<f64>) -> Self {
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Self { data }
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            data: Array3::zeros((height, width, channels)),
        }
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    pub fn channels(&self) -> usize {
        self.data.dim().2
    }

    pub fn view(&self) -> ArrayView3<'_, f64> {
        self.data.view()
    }

    pub fn as_array(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn into_array(self) -> Array3<f64> {
        self.data
    }

    /// Feature vector of the pixel at `(row, col)`.
    pub fn pixel(&self, row: usize, col: usize) -> ArrayView1<'_, f64> {
        self.data.slice(ndarray::s![row, col, ..])
    }

    /// Multiply every value by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::from_array(self.data.mapv(|v| v * factor))
    }

    /// `PFC1`, u32 LE height, width, channels, then f64 LE values in
    /// (row, column, channel) order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let (h, w, c) = self.data.dim();
        let mut buf = Vec::with_capacity(16 + 8 * self.data.len());
        buf.extend_from_slice(&FEATURE_MAGIC);
        for d in [h, w, c] {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in self.data.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || bytes[..4] != FEATURE_MAGIC {
            return Err(Error::format("not a PFC1 feature file"));
        }
        let dim =
            |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        let (h, w, c) = (dim(0), dim(1), dim(2));
        let payload = &bytes[16..];
        if payload.len() != 8 * h * w * c {
            return Err(Error::format("feature payload does not match header"));
        }
        let values = payload
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let data =
            Array3::from_shape_vec((h, w, c), values).map_err(|e| Error::format(e.to_string()))?;
        Self::from_array(data)
    }
}

pub fn save_features(cube: &FeatureCube, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, cube.to_bytes())?;
    Ok(())
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureCube> {
    FeatureCube::from_bytes(&fs::read(path)?)
}
