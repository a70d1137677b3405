//! Synthetic speckled PolSAR scenes.
//!
//! Each pixel's coherency matrix is the average of `looks` outer products
//! `k k^H`, where `k` is a zero-mean circular complex Gaussian vector with
//! the covariance of the pixel's class. Rows draw from independent ChaCha
//! streams keyed by `(rng_seed, row)`, so the result does not depend on
//! thread count or scheduling.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coherency::{Coherency, CoherencyImage};
use crate::error::{Error, Result};
use crate::labels::LabelMap;

const PSD_TOL: f64 = 1e-9;
const MIN_OCCUPANCY: f64 = 0.01;
const VORONOI_ATTEMPTS: u64 = 16;
const LAYOUT_STREAM: u64 = u64::MAX;

/// Class covariance with a display name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassModel {
    pub name: String,
    pub sigma: Coherency,
}

impl ClassModel {
    pub fn new(name: impl Into<String>, sigma: Coherency) -> Result<Self> {
        let model = Self {
            name: name.into(),
            sigma,
        };
        model.validate()?;
        Ok(model)
    }

    /// Leading principal minors of the covariance, top-left first.
    pub fn leading_minors(&self) -> [f64; 3] {
        let s = as_matrix(&self.sigma);
        let m1 = s[0][0].re;
        let m2 = (s[0][0] * s[1][1] - s[0][1] * s[1][0]).re;
        let m3 = (s[0][0] * (s[1][1] * s[2][2] - s[1][2] * s[2][1])
            - s[0][1] * (s[1][0] * s[2][2] - s[1][2] * s[2][0])
            + s[0][2] * (s[1][0] * s[2][1] - s[1][1] * s[2][0]))
            .re;
        [m1, m2, m3]
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            self.sigma.t11,
            self.sigma.t22,
            self.sigma.t33,
            self.sigma.t12.0,
            self.sigma.t12.1,
            self.sigma.t13.0,
            self.sigma.t13.1,
            self.sigma.t23.0,
            self.sigma.t23.1,
        ];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "class `{}` covariance is not finite",
                self.name
            )));
        }
        if self.leading_minors().iter().any(|&m| m < -PSD_TOL) {
            return Err(Error::invariant(format!(
                "class `{}` covariance is not PSD",
                self.name
            )));
        }
        Ok(())
    }
}

/// How classes are arranged on the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Layout {
    /// K vertical bands of (nearly) equal width.
    Rectangles,
    /// Nearest-seed regions; seed `s` belongs to class `s mod K`.
    Voronoi { seeds: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub classes: Vec<ClassModel>,
    pub layout: Layout,
    pub looks: u32,
    pub rng_seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::invalid("scene must be at least 1x1"));
        }
        if self.classes.len() < 2 {
            return Err(Error::invalid("scene needs at least two classes"));
        }
        if self.classes.len() > u8::MAX as usize {
            return Err(Error::invalid("too many classes for a label map"));
        }
        if self.looks == 0 {
            return Err(Error::invalid("looks must be positive"));
        }
        for class in &self.classes {
            class.validate()?;
        }
        Ok(())
    }
}

fn as_matrix(t: &Coherency) -> [[Complex64; 3]; 3] {
    let c = |(re, im): (f64, f64)| Complex64::new(re, im);
    let (t12, t13, t23) = (c(t.t12), c(t.t13), c(t.t23));
    [
        [Complex64::new(t.t11, 0.0), t12, t13],
        [t12.conj(), Complex64::new(t.t22, 0.0), t23],
        [t13.conj(), t23.conj(), Complex64::new(t.t33, 0.0)],
    ]
}

/// Lower-triangular `A` with `A A^H = sigma`. Zero pivots zero their column.
fn cholesky(sigma: &Coherency) -> [[Complex64; 3]; 3] {
    let s = as_matrix(sigma);
    let zero = Complex64::new(0.0, 0.0);
    let mut a = [[zero; 3]; 3];
    for j in 0..3 {
        let mut d = s[j][j].re;
        for k in 0..j {
            d -= a[j][k].norm_sqr();
        }
        if d <= 0.0 {
            continue;
        }
        let pivot = d.sqrt();
        a[j][j] = Complex64::new(pivot, 0.0);
        for i in j + 1..3 {
            let mut v = s[i][j];
            for k in 0..j {
                v -= a[i][k] * a[j][k].conj();
            }
            a[i][j] = v / pivot;
        }
    }
    a
}

fn sample_pixel(rng: &mut ChaCha8Rng, chol: &[[Complex64; 3]; 3], looks: u32) -> Coherency {
    let half = std::f64::consts::FRAC_1_SQRT_2;
    let mut acc = [[Complex64::new(0.0, 0.0); 3]; 3];
    for _ in 0..looks {
        let mut g = [Complex64::new(0.0, 0.0); 3];
        for gi in &mut g {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *gi = Complex64::new(re * half, im * half);
        }
        let mut k = [Complex64::new(0.0, 0.0); 3];
        for i in 0..3 {
            for j in 0..=i {
                k[i] += chol[i][j] * g[j];
            }
        }
        for i in 0..3 {
            for j in i..3 {
                acc[i][j] += k[i] * k[j].conj();
            }
        }
    }
    let n = looks as f64;
    let off = |z: Complex64| (z.re / n, z.im / n);
    Coherency {
        t11: acc[0][0].re / n,
        t22: acc[1][1].re / n,
        t33: acc[2][2].re / n,
        t12: off(acc[0][1]),
        t13: off(acc[0][2]),
        t23: off(acc[1][2]),
    }
}

fn row_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn layout_labels(spec: &SceneSpec) -> Result<Vec<u8>> {
    let (h, w) = (spec.height, spec.width);
    let k = spec.classes.len();
    match spec.layout {
        Layout::Rectangles => {
            if w < k {
                return Err(Error::invalid(format!(
                    "{k} vertical bands do not fit in width {w}"
                )));
            }
            let mut labels = Vec::with_capacity(h * w);
            for _ in 0..h {
                labels.extend((0..w).map(|c| (c * k / w + 1) as u8));
            }
            check_occupancy(&labels, k)?;
            Ok(labels)
        }
        Layout::Voronoi { seeds } => {
            if seeds < k {
                return Err(Error::invalid(format!(
                    "voronoi layout needs at least {k} seeds, got {seeds}"
                )));
            }
            let mut rng = row_rng(spec.rng_seed, LAYOUT_STREAM);
            let mut last_err = None;
            for _ in 0..VORONOI_ATTEMPTS {
                let points: Vec<(f64, f64)> = (0..seeds)
                    .map(|_| {
                        (
                            rng.random::<f64>() * h as f64,
                            rng.random::<f64>() * w as f64,
                        )
                    })
                    .collect();
                let labels = voronoi_assign(h, w, &points, k);
                match check_occupancy(&labels, k) {
                    Ok(()) => return Ok(labels),
                    Err(e) => last_err = Some(e),
                }
            }
            Err(last_err.expect("at least one attempt"))
        }
    }
}

fn voronoi_assign(h: usize, w: usize, points: &[(f64, f64)], k: usize) -> Vec<u8> {
    let mut labels = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let (y, x) = (r as f64 + 0.5, c as f64 + 0.5);
            let mut best = (f64::INFINITY, 0usize);
            for (s, &(py, px)) in points.iter().enumerate() {
                let d = (py - y).powi(2) + (px - x).powi(2);
                if d < best.0 {
                    best = (d, s);
                }
            }
            labels.push((best.1 % k + 1) as u8);
        }
    }
    labels
}

fn check_occupancy(labels: &[u8], k: usize) -> Result<()> {
    let mut counts = vec![0usize; k + 1];
    for &l in labels {
        counts[l as usize] += 1;
    }
    let total = labels.len() as f64;
    for (class, &count) in counts.iter().enumerate().skip(1) {
        if (count as f64) < MIN_OCCUPANCY * total {
            return Err(Error::invalid(format!(
                "layout leaves class {class} with {count} of {} pixels (< 1%)",
                labels.len()
            )));
        }
    }
    Ok(())
}

/// Draw a speckled scene and its ground-truth label map.
pub fn generate_scene(spec: &SceneSpec) -> Result<(CoherencyImage, LabelMap)> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let labels = layout_labels(spec)?;
    let factors: Vec<_> = spec.classes.iter().map(|c| cholesky(&c.sigma)).collect();

    let pixels: Vec<Coherency> = (0..h)
        .into_par_iter()
        .flat_map_iter(|r| {
            let mut rng = row_rng(spec.rng_seed, r as u64);
            let row = &labels[r * w..(r + 1) * w];
            row.iter()
                .map(|&l| sample_pixel(&mut rng, &factors[l as usize - 1], spec.looks))
                .collect::<Vec<_>>()
        })
        .collect();

    let image = CoherencyImage::from_pixels(h, w, &pixels)?;
    let truth = LabelMap::new(h, w, spec.classes.len() as u8, labels)?;
    Ok((image, truth))
}

/// Build a covariance from powers and complex correlation coefficients.
fn correlated(
    powers: [f64; 3],
    rho12: (f64, f64),
    rho13: (f64, f64),
    rho23: (f64, f64),
) -> Coherency {
    let s = powers.map(f64::sqrt);
    let scale = |(re, im): (f64, f64), a: f64, b: f64| (re * a * b, im * a * b);
    Coherency {
        t11: powers[0],
        t22: powers[1],
        t33: powers[2],
        t12: scale(rho12, s[0], s[1]),
        t13: scale(rho13, s[0], s[2]),
        t23: scale(rho23, s[1], s[2]),
    }
}

/// Built-in terrain-like class covariances.
pub fn default_class_bank(k: usize) -> Result<Vec<ClassModel>> {
    if !(2..=8).contains(&k) {
        return Err(Error::invalid(format!(
            "default class bank provides 2..=8 classes, requested {k}"
        )));
    }
    // Correlation magnitudes per row sum below 1, so every matrix is
    // diagonally dominant in correlation form and hence positive definite.
    let bank = [
        (
            "surface",
            correlated([0.8, 0.35, 0.2], (0.35, 0.10), (0.05, 0.0), (0.0, 0.0)),
        ),
        (
            "volume",
            correlated([1.0, 1.1, 0.7], (0.0, 0.10), (0.05, 0.0), (0.30, 0.0)),
        ),
        (
            "dihedral",
            correlated([0.6, 1.0, 0.3], (-0.30, 0.0), (0.0, 0.05), (0.10, 0.0)),
        ),
        (
            "bright",
            correlated([1.4, 0.9, 0.6], (0.25, -0.20), (0.15, 0.0), (0.20, 0.0)),
        ),
        (
            "dark",
            correlated([0.15, 0.06, 0.04], (0.20, 0.0), (0.0, 0.0), (0.0, 0.10)),
        ),
        (
            "urban",
            correlated([5.0, 4.0, 1.5], (0.0, 0.40), (0.10, 0.10), (0.0, -0.20)),
        ),
        (
            "mixed",
            correlated([1.8, 2.6, 2.4], (0.10, 0.0), (0.05, 0.05), (-0.25, 0.0)),
        ),
        (
            "canopy",
            correlated([0.8, 0.55, 0.45], (0.05, 0.0), (0.0, 0.30), (0.15, 0.0)),
        ),
    ];
    bank.into_iter()
        .take(k)
        .map(|(name, sigma)| ClassModel::new(name, sigma))
        .collect()
}
