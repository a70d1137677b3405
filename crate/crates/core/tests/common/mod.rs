//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use ndarray::Array3;
use polsar::labels::LabelMap;
use polsar::mrf::{Kernel, MrfProblem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const R: f64 = std::f64::consts::FRAC_1_SQRT_2;
const LOW: [f64; 2] = [R, R];
const HIGH: [f64; 2] = [-R, R];

fn taps(high: bool) -> [f64; 2] {
    if high {
        HIGH
    } else {
        LOW
    }
}

/// One 3D filter combination evaluated as a direct 2x2x2 stencil with
/// clamped indices. `combo` bit 2 selects the height filter, bit 1 width,
/// bit 0 channel (1 = high-pass).
pub fn stencil_band(x: &Array3<f64>, combo: usize) -> Array3<f64> {
    let (h, w, c) = x.dim();
    let fh = taps(combo & 4 != 0);
    let fw = taps(combo & 2 != 0);
    let fc = taps(combo & 1 != 0);
    Array3::from_shape_fn((h, w, c), |(i, j, k)| {
        let mut acc = 0.0;
        for a in 0..2 {
            for b in 0..2 {
                for e in 0..2 {
                    let v = x[[(i + a).min(h - 1), (j + b).min(w - 1), (k + e).min(c - 1)]];
                    acc += fh[a] * fw[b] * fc[e] * v;
                }
            }
        }
        acc
    })
}

/// 2D variant over height and width only; bit 1 height, bit 0 width.
pub fn stencil_band_2d(x: &Array3<f64>, combo: usize) -> Array3<f64> {
    let (h, w, c) = x.dim();
    let fh = taps(combo & 2 != 0);
    let fw = taps(combo & 1 != 0);
    Array3::from_shape_fn((h, w, c), |(i, j, k)| {
        let mut acc = 0.0;
        for a in 0..2 {
            for b in 0..2 {
                acc += fh[a] * fw[b] * x[[(i + a).min(h - 1), (j + b).min(w - 1), k]];
            }
        }
        acc
    })
}

/// 3x3 mean of magnitudes over in-bounds neighbours, written with signed
/// offsets rather than clipped ranges.
pub fn box_mean_abs(x: &Array3<f64>) -> Array3<f64> {
    let (h, w, c) = x.dim();
    Array3::from_shape_fn((h, w, c), |(i, j, k)| {
        let (mut sum, mut n) = (0.0, 0usize);
        for di in -1i64..=1 {
            for dj in -1i64..=1 {
                let (ii, jj) = (i as i64 + di, j as i64 + dj);
                if ii >= 0 && jj >= 0 && (ii as usize) < h && (jj as usize) < w {
                    sum += x[[ii as usize, jj as usize, k]].abs();
                    n += 1;
                }
            }
        }
        sum / n as f64
    })
}

fn concat(bands: &[Array3<f64>]) -> Array3<f64> {
    let (h, w, d) = bands[0].dim();
    let mut out = Array3::zeros((h, w, bands.len() * d));
    for (k, band) in bands.iter().enumerate() {
        let smoothed = box_mean_abs(band);
        for ((i, j, ch), v) in smoothed.indexed_iter() {
            out[[i, j, k * d + ch]] = *v;
        }
    }
    out
}

/// Two-level volumetric texture features: seven detail bands of level one,
/// then all eight bands of the level-one approximation.
pub fn naive_features_3d(x: &Array3<f64>) -> Array3<f64> {
    let approx = stencil_band(x, 0);
    let mut bands: Vec<_> = (1..8).map(|b| stencil_band(x, b)).collect();
    bands.extend((0..8).map(|b| stencil_band(&approx, b)));
    concat(&bands)
}

pub fn naive_features_2d(x: &Array3<f64>) -> Array3<f64> {
    let approx = stencil_band_2d(x, 0);
    let mut bands: Vec<_> = (1..4).map(|b| stencil_band_2d(x, b)).collect();
    bands.extend((0..4).map(|b| stencil_band_2d(&approx, b)));
    concat(&bands)
}

pub fn random_cube(rng: &mut impl Rng, h: usize, w: usize, c: usize) -> Array3<f64> {
    Array3::from_shape_fn((h, w, c), |_| rng.random_range(-10.0..10.0))
}

/// Random grid MRF: unary costs in `[0, 5]`, affinities in `(0, 1]`.
pub fn random_problem(
    rng: &mut ChaCha8Rng,
    h: usize,
    w: usize,
    k: usize,
    alpha_s: f64,
    kernel: Kernel,
) -> MrfProblem {
    let unary = (0..h * w * k)
        .map(|_| rng.random_range(0.0..=5.0))
        .collect();
    let mut affinity =
        |n: usize| -> Vec<f64> { (0..n).map(|_| 1.0 - rng.random_range(0.0..1.0)).collect() };
    let horizontal = affinity(h * (w - 1));
    let vertical = affinity((h - 1) * w);
    MrfProblem::new(h, w, k, unary, horizontal, vertical, alpha_s, kernel, 1.0).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn pair_cost(a: usize, b: usize, kernel: Kernel) -> f64 {
    match kernel {
        Kernel::Potts => f64::from(u8::from(a != b)),
        Kernel::LinearLabel => (a as f64 - b as f64).abs(),
    }
}

/// Energy of a 0-based labeling, each undirected edge counted once.
pub fn energy(p: &MrfProblem, labels: &[usize]) -> f64 {
    let (h, w) = (p.height(), p.width());
    let mut e = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        e += p.unary(i)[y];
    }
    for r in 0..h {
        for c in 0..w {
            let y = labels[r * w + c];
            if c + 1 < w {
                e += p.alpha_s()
                    * p.horizontal_affinity(r, c)
                    * pair_cost(y, labels[r * w + c + 1], p.kernel());
            }
            if r + 1 < h {
                e += p.alpha_s()
                    * p.vertical_affinity(r, c)
                    * pair_cost(y, labels[(r + 1) * w + c], p.kernel());
            }
        }
    }
    e
}

/// Global minimum by enumerating every labeling.
pub fn brute_force_min(p: &MrfProblem) -> (Vec<usize>, f64) {
    let (n, k) = (p.height() * p.width(), p.num_classes());
    let mut labels = vec![0usize; n];
    let mut best = (labels.clone(), energy(p, &labels));
    loop {
        let mut pos = n;
        loop {
            if pos == 0 {
                return best;
            }
            pos -= 1;
            labels[pos] += 1;
            if labels[pos] < k {
                break;
            }
            labels[pos] = 0;
        }
        let e = energy(p, &labels);
        if e < best.1 {
            best = (labels.clone(), e);
        }
    }
}

/// Exact chain minimum by dynamic programming (a 1-row problem).
pub fn chain_min(p: &MrfProblem) -> f64 {
    assert_eq!(p.height(), 1);
    let (n, k) = (p.width(), p.num_classes());
    let mut cost: Vec<f64> = p.unary(0).to_vec();
    for i in 1..n {
        let a = p.alpha_s() * p.horizontal_affinity(0, i - 1);
        cost = (0..k)
            .map(|y| {
                let best = (0..k)
                    .map(|x| cost[x] + a * pair_cost(x, y, p.kernel()))
                    .fold(f64::INFINITY, f64::min);
                best + p.unary(i)[y]
            })
            .collect();
    }
    cost.into_iter().fold(f64::INFINITY, f64::min)
}

/// Convert a 1-based label map into 0-based classes.
pub fn zero_based(labels: &LabelMap) -> Vec<usize> {
    labels.as_slice().iter().map(|&l| l as usize - 1).collect()
}
