//! Coherency-matrix images, their on-disk format, and the per-pixel
//! indicators derived from them.
//!
//! A coherency image stores the nine real degrees of freedom of each
//! Hermitian 3x3 matrix `T` as separate planes, in the order
//! `[T11, T22, T33, Re T12, Im T12, Re T13, Im T13, Re T23, Im T23]`.

use std::fs;
use std::path::Path;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::cube::FeatureCube;
use crate::error::{Error, Result};

pub const COHERENCY_MAGIC: [u8; 4] = *b"PT3\0";

pub const PLANE_COUNT: usize = 9;

/// Index of each real plane in a [`CoherencyImage`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(usize)]
pub enum Plane {
    T11 = 0,
    T22 = 1,
    T33 = 2,
    ReT12 = 3,
    ImT12 = 4,
    ReT13 = 5,
    ImT13 = 6,
    ReT23 = 7,
    ImT23 = 8,
}

/// Number of raw indicator channels produced by [`extract_raw_features`].
pub const RAW_CHANNELS: usize = 7;

const MINOR_REL_TOL: f64 = 1e-6;

/// One coherency matrix in linear power units, accumulated in f64.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Coherency {
    pub t11: f64,
    pub t22: f64,
    pub t33: f64,
    pub t12: (f64, f64),
    pub t13: (f64, f64),
    pub t23: (f64, f64),
}

impl Coherency {
    pub fn span(&self) -> f64 {
        self.t11 + self.t22 + self.t33
    }

    fn to_f32_planes(self) -> [f32; PLANE_COUNT] {
        [
            self.t11 as f32,
            self.t22 as f32,
            self.t33 as f32,
            self.t12.0 as f32,
            self.t12.1 as f32,
            self.t13.0 as f32,
            self.t13.1 as f32,
            self.t23.0 as f32,
            self.t23.1 as f32,
        ]
    }
}

/// H x W grid of 3x3 coherency matrices stored as nine f32 planes.
#[derive(Debug, Clone, PartialEq)]
pub struct CoherencyImage {
    height: usize,
    width: usize,
    // plane-major: planes[p * H * W + r * W + c]
    planes: Vec<f32>,
}

impl CoherencyImage {
    /// Build from plane-major data, validating every pixel.
    pub fn from_planes(height: usize, width: usize, planes: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid(format!(
                "empty coherency image {height}x{width}"
            )));
        }
        let n = height * width;
        if planes.len() != PLANE_COUNT * n {
            return Err(Error::invalid(format!(
                "plane buffer has {} values, expected {}",
                planes.len(),
                PLANE_COUNT * n
            )));
        }
        let img = Self {
            height,
            width,
            planes,
        };
        img.validate()?;
        Ok(img)
    }

    /// Build from per-pixel matrices (row-major), rounding to f32 storage.
    pub fn from_pixels(height: usize, width: usize, pixels: &[Coherency]) -> Result<Self> {
        let n = height * width;
        if pixels.len() != n {
            return Err(Error::invalid(format!(
                "{} pixels supplied for a {height}x{width} image",
                pixels.len()
            )));
        }
        let mut planes = vec![0f32; PLANE_COUNT * n];
        for (i, px) in pixels.iter().enumerate() {
            for (p, v) in px.to_f32_planes().into_iter().enumerate() {
                planes[p * n + i] = v;
            }
        }
        Self::from_planes(height, width, planes)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn plane(&self, plane: Plane) -> &[f32] {
        let n = self.pixel_count();
        let p = plane as usize;
        &self.planes[p * n..(p + 1) * n]
    }

    /// Matrix at flat pixel index `idx`, widened to f64.
    pub fn at(&self, idx: usize) -> Coherency {
        let n = self.pixel_count();
        let v = |p: usize| self.planes[p * n + idx] as f64;
        Coherency {
            t11: v(0),
            t22: v(1),
            t33: v(2),
            t12: (v(3), v(4)),
            t13: (v(5), v(6)),
            t23: (v(7), v(8)),
        }
    }

    fn validate(&self) -> Result<()> {
        let n = self.pixel_count();
        if let Some(pos) = self.planes.iter().position(|v| !v.is_finite()) {
            return Err(Error::invariant(format!(
                "non-finite value in plane {} at pixel {}",
                pos / n,
                pos % n
            )));
        }
        for idx in 0..n {
            let t = self.at(idx);
            if t.t11 < 0.0 || t.t22 < 0.0 || t.t33 < 0.0 {
                return Err(Error::invariant(format!(
                    "negative diagonal at pixel {idx}"
                )));
            }
            let minors = [
                ("T12", t.t12, t.t11 * t.t22),
                ("T13", t.t13, t.t11 * t.t33),
                ("T23", t.t23, t.t22 * t.t33),
            ];
            for (name, (re, im), bound) in minors {
                let mag2 = re * re + im * im;
                if mag2 > bound * (1.0 + MINOR_REL_TOL) {
                    return Err(Error::invariant(format!(
                        "PSD minor violated for {name} at pixel {idx}: |{name}|^2 = {mag2} > {bound}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(12 + 4 * self.planes.len());
        buf.extend_from_slice(&COHERENCY_MAGIC);
        buf.extend_from_slice(&(self.height as u32).to_le_bytes());
        buf.extend_from_slice(&(self.width as u32).to_le_bytes());
        for v in &self.planes {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || bytes[..4] != COHERENCY_MAGIC {
            return Err(Error::format("bad magic: not a PT3 coherency file"));
        }
        if bytes.len() < 12 {
            return Err(Error::format("truncated coherency header"));
        }
        let height = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let width = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let values = height
            .checked_mul(width)
            .and_then(|n| n.checked_mul(PLANE_COUNT))
            .ok_or_else(|| Error::format("coherency dimensions overflow"))?;
        let payload = &bytes[12..];
        if payload.len() < 4 * values {
            return Err(Error::format(format!(
                "truncated coherency payload: {} of {} bytes",
                payload.len(),
                4 * values
            )));
        }
        if payload.len() > 4 * values {
            return Err(Error::format("trailing bytes after coherency payload"));
        }
        let planes = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::from_planes(height, width, planes)
    }

    /// Swap rows and columns.
    pub fn transposed(&self) -> Self {
        let (h, w) = (self.height, self.width);
        let n = h * w;
        let mut planes = vec![0f32; self.planes.len()];
        for p in 0..PLANE_COUNT {
            for r in 0..h {
                for c in 0..w {
                    planes[p * n + c * h + r] = self.planes[p * n + r * w + c];
                }
            }
        }
        Self {
            height: w,
            width: h,
            planes,
        }
    }
}

pub fn load_coherency(path: impl AsRef<Path>) -> Result<CoherencyImage> {
    CoherencyImage::from_bytes(&fs::read(path)?)
}

pub fn save_coherency(img: &CoherencyImage, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, img.to_bytes())?;
    Ok(())
}

/// Seven raw indicators per pixel: `[SPAN, T11, T22, T33, |T12|, |T13|, |T23|]`.
pub fn extract_raw_features(img: &CoherencyImage) -> FeatureCube {
    let (h, w) = (img.height(), img.width());
    let mut data = Array3::<f64>::zeros((h, w, RAW_CHANNELS));
    for r in 0..h {
        for c in 0..w {
            let t = img.at(r * w + c);
            let mag = |(re, im): (f64, f64)| re.hypot(im);
            let px = [
                t.span(),
                t.t11,
                t.t22,
                t.t33,
                mag(t.t12),
                mag(t.t13),
                mag(t.t23),
            ];
            for (ch, v) in px.into_iter().enumerate() {
                data[[r, c, ch]] = v;
            }
        }
    }
    FeatureCube::from_array_unchecked(data)
}

/// Per-pixel Pauli amplitudes `(sqrt T11, sqrt T22, sqrt T33)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PauliField {
    height: usize,
    width: usize,
    components: Vec<[f64; 3]>,
}

impl PauliField {
    pub fn new(height: usize, width: usize, components: Vec<[f64; 3]>) -> Result<Self> {
        if height == 0 || width == 0 || components.len() != height * width {
            return Err(Error::invalid("pauli field dimensions do not match data"));
        }
        if components
            .iter()
            .flatten()
            .any(|v| !v.is_finite() || *v < 0.0)
        {
            return Err(Error::invariant(
                "pauli components must be finite and non-negative",
            ));
        }
        Ok(Self {
            height,
            width,
            components,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, row: usize, col: usize) -> [f64; 3] {
        self.components[row * self.width + col]
    }

    pub fn as_slice(&self) -> &[[f64; 3]] {
        &self.components
    }

    pub fn transposed(&self) -> Self {
        let mut out = vec![[0.0; 3]; self.components.len()];
        for r in 0..self.height {
            for c in 0..self.width {
                out[c * self.height + r] = self.components[r * self.width + c];
            }
        }
        Self {
            height: self.width,
            width: self.height,
            components: out,
        }
    }
}

pub fn extract_pauli(img: &CoherencyImage) -> PauliField {
    let components = (0..img.pixel_count())
        .map(|i| {
            let t = img.at(i);
            [t.t11.sqrt(), t.t22.sqrt(), t.t33.sqrt()]
        })
        .collect();
    PauliField {
        height: img.height(),
        width: img.width(),
        components,
    }
}
