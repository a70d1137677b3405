use std::collections::HashSet;

use polsar::labels::LabelMap;
use polsar::pipeline::{
    encode_label_png, evaluate, run_pipeline, ConfigFile, FeatureMode, PipelineConfig,
    DEFAULT_PALETTE,
};
use polsar::synth::{default_class_bank, ClassModel, Layout, SceneSpec};
use polsar::Coherency;

fn small(seed: u64) -> PipelineConfig {
    let mut cfg = PipelineConfig::synthetic(seed);
    if let polsar::pipeline::Input::Synthetic(spec) = &mut cfg.input {
        spec.height = 64;
        spec.width = 64;
        spec.layout = Layout::Voronoi { seeds: 8 };
    }
    cfg.train.train_fraction = 0.05;
    cfg
}

#[test]
fn easy_two_class_scene_is_solved_without_refinement() {
    let dim = |p: f64| Coherency {
        t11: p,
        t22: 0.5 * p,
        t33: 0.25 * p,
        t12: (0.1 * p, 0.0),
        ..Default::default()
    };
    // The two columns left of the class boundary see both classes through
    // the forward-difference taps, so the scene is wide enough for that
    // band to stay under 1% of the pixels.
    let spec = SceneSpec {
        height: 64,
        width: 256,
        classes: vec![
            ClassModel::new("low", dim(1.0)).unwrap(),
            ClassModel::new("high", dim(8.0)).unwrap(),
        ],
        layout: Layout::Rectangles,
        looks: 64,
        rng_seed: 2,
    };
    let mut cfg = PipelineConfig::new(polsar::pipeline::Input::Synthetic(spec));
    cfg.mrf = false;
    let out = run_pipeline(&cfg).unwrap();
    assert!(out.report.overall_ca >= 99.0, "{}", out.report.overall_ca);
}

#[test]
fn training_pixels_are_never_scored() {
    let out = run_pipeline(&small(4)).unwrap();
    let train: HashSet<usize> = out.train_set.indices.iter().copied().collect();
    let scored = (out.truth.labeled_indices().len() - train.len()) as u64;
    assert_eq!(out.report.evaluated_pixels, scored);
    let total: u64 = out.report.confusion.iter().flatten().sum();
    assert_eq!(total, scored);
}

#[test]
fn every_feature_mode_runs() {
    for (mode, dim) in [
        (FeatureMode::Raw, 7),
        (FeatureMode::Dwt2d, 49),
        (FeatureMode::Dwt3d, 105),
    ] {
        let mut cfg = small(1);
        cfg.feature_mode = mode;
        let out = run_pipeline(&cfg).unwrap();
        assert_eq!(out.feature_dim, dim);
        assert!(out.report.overall_ca > 25.0);
    }
}

#[test]
fn artifacts_are_written_and_metrics_parse() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(6);
    cfg.out_dir = Some(dir.path().to_path_buf());
    run_pipeline(&cfg).unwrap();
    for name in ["labels.png", "metrics.json", "model.plm", "timing.json"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    let text = std::fs::read_to_string(dir.path().join("metrics.json")).unwrap();
    let json: serde_json::Value = serde_json::from_str(&text).unwrap();
    for key in ["per_class_ca", "overall_ca", "confusion", "timing_s", "bp"] {
        assert!(json.get(key).is_some(), "{key}");
    }
    assert_eq!(json["per_class_ca"].as_object().unwrap().len(), 4);
}

#[test]
fn config_file_drives_the_pipeline() {
    let file = ConfigFile::parse(
        "seed = 9\nfeature_mode = \"dwt2d\"\nalpha_s = 2.5\nkernel = \"linear-label\"\n\
         synth_height = 48\nsynth_width = 40\nsynth_classes = 3\n",
    )
    .unwrap();
    let cfg = file.to_pipeline().unwrap();
    assert_eq!(cfg.feature_mode, FeatureMode::Dwt2d);
    assert_eq!(cfg.alpha_s, 2.5);
    let out = run_pipeline(&cfg).unwrap();
    assert_eq!(out.labels.height(), 48);
    assert_eq!(out.labels.num_classes(), 3);
    assert!(ConfigFile::parse("no_such_key = 1").is_err());
}

#[test]
fn evaluation_examples() {
    let truth = LabelMap::new(1, 4, 2, vec![1; 4]).unwrap();
    let pred = LabelMap::new(1, 4, 2, vec![1, 1, 2, 2]).unwrap();
    let r = evaluate(&pred, &truth, &[]).unwrap();
    assert_eq!(r.per_class_ca[0], Some(50.0));
    assert_eq!(r.overall_ca, 50.0);
    let r = evaluate(&truth, &truth, &[]).unwrap();
    assert_eq!(r.overall_ca, 100.0);
    let void = LabelMap::unlabeled(1, 4, 2).unwrap();
    let err = evaluate(&pred, &void, &[]).unwrap_err();
    assert!(err.to_string().contains("empty evaluation set"), "{err}");
}

#[test]
fn png_decodes_to_palette_colors() {
    let bank = default_class_bank(4).unwrap();
    let labels: Vec<u8> = (0..35).map(|i| (i % 5) as u8).collect();
    let map = LabelMap::new(5, 7, bank.len() as u8, labels).unwrap();
    let mut bytes = Vec::new();
    encode_label_png(&map, &DEFAULT_PALETTE, &mut bytes).unwrap();
    let img = image::load_from_memory(&bytes).unwrap().to_rgb8();
    assert_eq!((img.width(), img.height()), (7, 5));
    for r in 0..5 {
        for c in 0..7 {
            let l = map.get(r, c) as usize;
            let want = if l == 0 {
                [0, 0, 0]
            } else {
                DEFAULT_PALETTE[l - 1]
            };
            assert_eq!(img.get_pixel(c as u32, r as u32).0, want);
        }
    }
}
