mod common;

use ndarray::Array3;
use polsar::coherency::{
    extract_pauli, extract_raw_features, load_coherency, save_coherency, Coherency, CoherencyImage,
};
use polsar::cube::{load_features, save_features};
use polsar::dwt::{dwt2d_features, dwt_features, udwt_1d, udwt_3d_level, Boundary, HaarFilters};
use polsar::synth::{default_class_bank, generate_scene, Layout, SceneSpec};
use polsar::FeatureCube;
use proptest::prelude::*;

fn scene(h: usize, w: usize, seed: u64) -> CoherencyImage {
    let spec = SceneSpec {
        height: h,
        width: w,
        classes: default_class_bank(3).unwrap(),
        layout: Layout::Rectangles,
        looks: 3,
        rng_seed: seed,
    };
    generate_scene(&spec).unwrap().0
}

fn cube_strategy(max: usize) -> impl Strategy<Value = Array3<f64>> {
    (1..=max, 1..=max, 1..=max).prop_flat_map(|(h, w, c)| {
        prop::collection::vec(-50.0..50.0f64, h * w * c)
            .prop_map(move |v| Array3::from_shape_vec((h, w, c), v).unwrap())
    })
}

#[test]
fn coherency_file_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let img = scene(16, 16, 4);
    let path = dir.path().join("scene.pt3");
    save_coherency(&img, &path).unwrap();
    let back = load_coherency(&path).unwrap();
    assert_eq!(back, img);
    assert_eq!(std::fs::read(&path).unwrap(), img.to_bytes());
}

#[test]
fn unwritable_path_is_an_io_error() {
    let img = scene(6, 6, 1);
    let err = save_coherency(&img, "/nonexistent-dir/x/scene.pt3").unwrap_err();
    assert!(matches!(err, polsar::Error::Io(_)), "{err:?}");
}

#[test]
fn truncated_file_is_rejected() {
    let bytes = scene(4, 4, 2).to_bytes();
    assert!(CoherencyImage::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(CoherencyImage::from_bytes(&extra).is_err());
}

#[test]
fn feature_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let feats = dwt_features(&extract_raw_features(&scene(6, 5, 8)));
    let path = dir.path().join("f.pfc");
    save_features(&feats, &path).unwrap();
    assert_eq!(load_features(&path).unwrap(), feats);
}

#[test]
fn known_pixel_indicators() {
    let t = Coherency {
        t11: 9.0,
        t22: 16.0,
        t33: 4.0,
        t12: (3.0, 4.0),
        ..Default::default()
    };
    let img = CoherencyImage::from_pixels(1, 1, &[t]).unwrap();
    let raw = extract_raw_features(&img);
    let px: Vec<f64> = raw.pixel(0, 0).to_vec();
    assert_eq!(px, vec![29.0, 9.0, 16.0, 4.0, 5.0, 0.0, 0.0]);
    assert_eq!(extract_pauli(&img).get(0, 0), [3.0, 4.0, 2.0]);
}

#[test]
fn separable_level_matches_stencil() {
    let mut rng = common::rng(8);
    let x = common::random_cube(&mut rng, 4, 4, 4);
    let bands = udwt_3d_level(&FeatureCube::from_array(x.clone()).unwrap());
    for (combo, band) in bands.iter().enumerate() {
        let expect = common::stencil_band(&x, combo);
        for (a, b) in band.as_array().iter().zip(expect.iter()) {
            assert!((a - b).abs() <= 1e-10, "band {combo}: {a} vs {b}");
        }
    }
}

#[test]
fn constant_cube_keeps_only_the_all_low_band() {
    let c = 2.5;
    let raw = FeatureCube::from_array(Array3::from_elem((5, 4, 7), c)).unwrap();
    let feats = dwt_features(&raw);
    assert_eq!(feats.channels(), 105);
    // Band 7 is the level-2 LLL band: channels 49..56.
    for ((_, _, ch), v) in feats.as_array().indexed_iter() {
        if (49..56).contains(&ch) {
            assert!((v - 8.0 * c).abs() < 1e-9, "channel {ch}: {v}");
        } else {
            assert!(v.abs() < 1e-12, "channel {ch}: {v}");
        }
    }
}

#[test]
fn spatial_features_match_naive_reference() {
    let mut rng = common::rng(21);
    for _ in 0..20 {
        let x = common::random_cube(&mut rng, 6, 5, 7);
        let fast = dwt2d_features(&FeatureCube::from_array(x.clone()).unwrap());
        let slow = common::naive_features_2d(&x);
        assert_eq!(fast.channels(), 49);
        for (a, b) in fast.as_array().iter().zip(slow.iter()) {
            assert!((a - b).abs() <= 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn haar_pair_preserves_local_energy(x in prop::collection::vec(-1e3..1e3f64, 1..64)) {
        let low = udwt_1d(&x, HaarFilters::LOW, Boundary::Replicate).unwrap();
        let high = udwt_1d(&x, HaarFilters::HIGH, Boundary::Replicate).unwrap();
        let n = x.len();
        for i in 0..n {
            let next = x[(i + 1).min(n - 1)];
            let lhs = low[i] * low[i] + high[i] * high[i];
            let rhs = x[i] * x[i] + next * next;
            prop_assert!((lhs - rhs).abs() <= 1e-10 * rhs.max(1.0));
        }
    }

    #[test]
    fn volumetric_features_match_naive_reference(x in cube_strategy(5)) {
        let fast = dwt_features(&FeatureCube::from_array(x.clone()).unwrap());
        let slow = common::naive_features_3d(&x);
        prop_assert_eq!(fast.channels(), 15 * x.dim().2);
        for (a, b) in fast.as_array().iter().zip(slow.iter()) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn features_are_non_negative_and_scale_linearly(x in cube_strategy(4), k in 0.1..10.0f64) {
        let base = dwt_features(&FeatureCube::from_array(x.clone()).unwrap());
        let scaled = dwt_features(&FeatureCube::from_array(x * k).unwrap());
        for (a, b) in base.as_array().iter().zip(scaled.as_array().iter()) {
            prop_assert!(*a >= 0.0);
            prop_assert!((a * k - b).abs() <= 1e-9 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn span_is_the_diagonal_sum(seed in any::<u64>()) {
        let img = scene(8, 9, seed);
        let raw = extract_raw_features(&img);
        let pauli = extract_pauli(&img);
        for r in 0..8 {
            for c in 0..9 {
                let px = raw.pixel(r, c);
                prop_assert!((px[0] - px[1] - px[2] - px[3]).abs() <= 1e-6 * px[0].max(1.0));
                let v = pauli.get(r, c);
                for d in 0..3 {
                    prop_assert!((v[d] * v[d] - px[d + 1]).abs() <= 1e-6 * px[d + 1].max(1.0));
                }
            }
        }
    }
}
