//! Undecimated separable Haar wavelet transforms over feature cubes.
//!
//! Every transform keeps the input size: taps are applied as
//! `out[i] = f0 * x[i] + f1 * x[i + 1]` with `x[len]` replicated from
//! `x[len - 1]`. A decomposition level filters the cube along each
//! requested axis with both the low- and high-pass filter, yielding one
//! band per filter combination; the all-low band feeds the next level.

use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;

use ndarray::{s, Array3, ArrayView3, Axis, Zip};

use crate::cube::FeatureCube;
use crate::error::{Error, Result};

/// Haar analysis filters.
pub struct HaarFilters;

impl HaarFilters {
    pub const LOW: [f64; 2] = [FRAC_1_SQRT_2, FRAC_1_SQRT_2];
    pub const HIGH: [f64; 2] = [-FRAC_1_SQRT_2, FRAC_1_SQRT_2];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Filter {
    Low,
    High,
}

impl Filter {
    pub fn taps(self) -> [f64; 2] {
        match self {
            Filter::Low => HaarFilters::LOW,
            Filter::High => HaarFilters::HIGH,
        }
    }

    fn letter(self) -> char {
        match self {
            Filter::Low => 'L',
            Filter::High => 'H',
        }
    }
}

/// How the sample past the last element is resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Boundary {
    #[default]
    Replicate,
}

/// One-dimensional undecimated filtering.
pub fn udwt_1d(signal: &[f64], taps: [f64; 2], boundary: Boundary) -> Result<Vec<f64>> {
    let n = signal.len();
    if n == 0 {
        return Err(Error::invalid("cannot transform an empty signal"));
    }
    let next = |i: usize| match boundary {
        Boundary::Replicate => signal[(i + 1).min(n - 1)],
    };
    Ok((0..n)
        .map(|i| taps[0] * signal[i] + taps[1] * next(i))
        .collect())
}

fn filter_axis(input: ArrayView3<'_, f64>, axis: usize, taps: [f64; 2]) -> Array3<f64> {
    let n = input.len_of(Axis(axis));
    let mut out = Array3::<f64>::zeros(input.raw_dim());
    let (f0, f1) = (taps[0], taps[1]);
    let (head, tail) = (
        input.slice_axis(Axis(axis), (0..n - 1).into()),
        input.slice_axis(Axis(axis), (1..n).into()),
    );
    Zip::from(out.slice_axis_mut(Axis(axis), (0..n - 1).into()))
        .and(head)
        .and(tail)
        .for_each(|o, &a, &b| *o = f0 * a + f1 * b);
    let last = input.slice_axis(Axis(axis), (n - 1..n).into());
    Zip::from(out.slice_axis_mut(Axis(axis), (n - 1..n).into()))
        .and(last)
        .for_each(|o, &a| *o = f0 * a + f1 * a);
    out
}

/// All `2^axes.len()` filter combinations of one level, in lexicographic
/// filter order with the first listed axis most significant (all-low first).
fn decompose(input: &Array3<f64>, axes: &[usize]) -> Vec<Array3<f64>> {
    let mut bands = vec![input.clone()];
    for &axis in axes {
        bands = bands
            .iter()
            .flat_map(|b| {
                [Filter::Low, Filter::High].map(|f| filter_axis(b.view(), axis, f.taps()))
            })
            .collect();
    }
    bands
}

/// One level of the separable 3D transform: the eight filter combinations
/// along (height, width, channel), ordered LLL, LLH, LHL, ..., HHH.
pub fn udwt_3d_level(cube: &FeatureCube) -> [FeatureCube; 8] {
    let bands = decompose(cube.as_array(), &[0, 1, 2]);
    let mut it = bands.into_iter().map(FeatureCube::from_array_unchecked);
    std::array::from_fn(|_| it.next().expect("eight bands"))
}

/// A retained band: its decomposition level (1-based) and filters per axis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubBand {
    pub level: usize,
    pub filters: Vec<Filter>,
}

impl fmt::Display for SubBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name: String = self.filters.iter().map(|f| f.letter()).collect();
        write!(f, "{name}{}", self.level)
    }
}

/// Enumeration of the bands a multi-level decomposition retains: the
/// non-approximation bands of every level but the last, then all bands of
/// the last level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DwtPlan {
    pub levels: usize,
    pub axes: Vec<usize>,
}

impl DwtPlan {
    /// Height, width and channel axes.
    pub fn volumetric(levels: usize) -> Self {
        Self {
            levels,
            axes: vec![0, 1, 2],
        }
    }

    /// Height and width axes only.
    pub fn spatial(levels: usize) -> Self {
        Self {
            levels,
            axes: vec![0, 1],
        }
    }

    pub fn subbands(&self) -> Vec<SubBand> {
        let per_level = 1usize << self.axes.len();
        let combo = |idx: usize| -> Vec<Filter> {
            (0..self.axes.len())
                .map(|bit| {
                    if idx >> (self.axes.len() - 1 - bit) & 1 == 1 {
                        Filter::High
                    } else {
                        Filter::Low
                    }
                })
                .collect()
        };
        let mut out = Vec::new();
        for level in 1..=self.levels {
            let first = if level < self.levels { 1 } else { 0 };
            out.extend((first..per_level).map(|idx| SubBand {
                level,
                filters: combo(idx),
            }));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::invalid(
                "wavelet decomposition needs at least one level",
            ));
        }
        Ok(())
    }

    fn retained_bands(&self, input: &Array3<f64>) -> Vec<Array3<f64>> {
        let mut retained = Vec::new();
        let mut approx = input.clone();
        for level in 1..=self.levels {
            let mut bands = decompose(&approx, &self.axes);
            if level < self.levels {
                approx = bands.remove(0);
                retained.extend(bands);
            } else {
                retained.extend(bands);
            }
        }
        retained
    }
}

/// 3x3 spatial mean of absolute values, per channel. Border pixels average
/// only their in-bounds neighbours.
pub fn mean_abs_filter(cube: ArrayView3<'_, f64>) -> Array3<f64> {
    let (h, w, c) = cube.dim();
    let mut out = Array3::<f64>::zeros((h, w, c));
    for i in 0..h {
        let rows = i.saturating_sub(1)..(i + 2).min(h);
        for j in 0..w {
            let cols = j.saturating_sub(1)..(j + 2).min(w);
            let count = (rows.len() * cols.len()) as f64;
            for ch in 0..c {
                let mut sum = 0.0;
                for m in rows.clone() {
                    for n in cols.clone() {
                        sum += cube[[m, n, ch]].abs();
                    }
                }
                out[[i, j, ch]] = sum / count;
            }
        }
    }
    out
}

/// Decompose, mean-filter the magnitude of every retained band, and
/// concatenate: output channel `k * D + d` is channel `d` of band `k`.
pub fn wavelet_features(raw: &FeatureCube, plan: &DwtPlan) -> Result<FeatureCube> {
    plan.validate()?;
    let (h, w, d) = raw.as_array().dim();
    let bands = plan.retained_bands(raw.as_array());
    let mut out = Array3::<f64>::zeros((h, w, bands.len() * d));
    for (k, band) in bands.iter().enumerate() {
        let smoothed = mean_abs_filter(band.view());
        out.slice_mut(s![.., .., k * d..(k + 1) * d])
            .assign(&smoothed);
    }
    Ok(FeatureCube::from_array_unchecked(out))
}

/// Two-level 3D features: 15 bands per raw channel (105 for 7 channels).
pub fn dwt_features(raw: &FeatureCube) -> FeatureCube {
    wavelet_features(raw, &DwtPlan::volumetric(2)).expect("two-level plan is valid")
}

/// Two-level 2D features on height/width only: 7 bands per raw channel.
pub fn dwt2d_features(raw: &FeatureCube) -> FeatureCube {
    wavelet_features(raw, &DwtPlan::spatial(2)).expect("two-level plan is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    const SQRT2: f64 = std::f64::consts::SQRT_2;

    #[test]
    fn haar_pair_is_orthonormal() {
        let (l, h) = (HaarFilters::LOW, HaarFilters::HIGH);
        assert!((l[0] * l[0] + l[1] * l[1] - 1.0).abs() < 1e-15);
        assert!((h[0] * h[0] + h[1] * h[1] - 1.0).abs() < 1e-15);
        assert!((l[0] * h[0] + l[1] * h[1]).abs() < 1e-15);
    }

    #[test]
    fn constant_signal() {
        let c = 2.5;
        let low = udwt_1d(&[c; 3], HaarFilters::LOW, Boundary::Replicate).unwrap();
        let high = udwt_1d(&[c; 3], HaarFilters::HIGH, Boundary::Replicate).unwrap();
        for v in low {
            assert!((v - SQRT2 * c).abs() < 1e-12);
        }
        assert!(high.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_sample_signal() {
        let low = udwt_1d(&[1.0, 3.0], HaarFilters::LOW, Boundary::Replicate).unwrap();
        let high = udwt_1d(&[1.0, 3.0], HaarFilters::HIGH, Boundary::Replicate).unwrap();
        assert!((low[0] - 4.0 / SQRT2).abs() < 1e-12);
        assert!((low[1] - 6.0 / SQRT2).abs() < 1e-12);
        assert!((high[0] - 2.0 / SQRT2).abs() < 1e-12);
        assert_eq!(high[1], 0.0);
    }

    #[test]
    fn empty_signal_is_an_error() {
        assert!(udwt_1d(&[], HaarFilters::LOW, Boundary::Replicate).is_err());
    }

    #[test]
    fn plan_orders() {
        let names: Vec<String> = DwtPlan::volumetric(2)
            .subbands()
            .iter()
            .map(|b| b.to_string())
            .collect();
        assert_eq!(
            names,
            [
                "LLH1", "LHL1", "LHH1", "HLL1", "HLH1", "HHL1", "HHH1", "LLL2", "LLH2", "LHL2",
                "LHH2", "HLL2", "HLH2", "HHL2", "HHH2"
            ]
        );
        assert_eq!(DwtPlan::spatial(2).subbands().len(), 7);
        assert_eq!(DwtPlan::volumetric(3).subbands().len(), 22);
        assert!(DwtPlan::volumetric(0).validate().is_err());
    }

    #[test]
    fn constant_cube_level() {
        let cube = FeatureCube::from_array(Array3::from_elem((3, 4, 5), 1.5)).unwrap();
        let bands = udwt_3d_level(&cube);
        let expected = SQRT2.powi(3) * 1.5;
        assert!(bands[0]
            .as_array()
            .iter()
            .all(|v| (v - expected).abs() < 1e-12));
        for band in &bands[1..] {
            assert!(band.as_array().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn impulse_response() {
        let mut data = Array3::zeros((4, 4, 4));
        data[[0, 0, 0]] = 1.0;
        let bands = udwt_3d_level(&FeatureCube::from_array(data).unwrap());
        assert!((bands[0].as_array()[[0, 0, 0]] - FRAC_1_SQRT_2.powi(3)).abs() < 1e-15);
    }

    #[test]
    fn constant_cube_features() {
        let c = 0.75;
        let cube = FeatureCube::from_array(Array3::from_elem((4, 5, 7), c)).unwrap();
        let feats = dwt_features(&cube);
        assert_eq!(feats.channels(), 105);
        let arr = feats.as_array();
        for k in 0..15 {
            for d in 0..7 {
                let v = arr[[2, 2, k * 7 + d]];
                if k == 7 {
                    assert!((v - SQRT2.powi(6) * c).abs() < 1e-12);
                } else {
                    assert_eq!(v, 0.0, "band {k}");
                }
            }
        }
    }

    #[test]
    fn border_mean_uses_in_bounds_neighbours() {
        let cube = Array3::from_elem((3, 3, 1), -2.0);
        let out = mean_abs_filter(cube.view());
        assert!(out.iter().all(|&v| (v - 2.0).abs() < 1e-15));
        let mut ramp = Array3::zeros((2, 2, 1));
        ramp[[0, 0, 0]] = 4.0;
        let out = mean_abs_filter(ramp.view());
        assert_eq!(out[[1, 1, 0]], 1.0);
    }

    #[test]
    fn spatial_mode_dimensions() {
        let cube = FeatureCube::from_array(Array3::from_elem((6, 6, 7), 1.0)).unwrap();
        assert_eq!(dwt2d_features(&cube).channels(), 49);
    }
}
