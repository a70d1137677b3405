//! End-to-end segmentation: scene -> raw indicators -> wavelet features ->
//! classifier probabilities -> MRF refinement -> evaluation and artifacts.

pub mod config;
pub mod eval;
pub mod render;

use std::fs;
use std::path::Path;
use std::time::Instant;

use indexmap::IndexMap;
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::classifier::{
    predict_probabilities, sample_training_set, save_model, train_with_report, LinearModel,
    ProbabilityField, TrainConfig, TrainReport, TrainingSet,
};
use crate::coherency::{
    extract_pauli, extract_raw_features, load_coherency, CoherencyImage, PauliField,
};
use crate::cube::FeatureCube;
use crate::dwt::{wavelet_features, DwtPlan};
use crate::error::{Error, Result, StageContext};
use crate::labels::{load_labels, LabelMap};
use crate::mrf::{bp_solve, BpConfig, BpDiagnostics, Kernel, MrfProblem, Sigma};
use crate::synth::generate_scene;

pub use config::{ConfigFile, FeatureMode, Input, PipelineConfig};
pub use eval::{evaluate, EvalReport};
pub use render::{encode_label_png, export_label_png, Rgb, DEFAULT_PALETTE};

/// A loaded or generated scene with its ground truth.
#[derive(Debug, Clone)]
pub struct Scene {
    pub image: CoherencyImage,
    pub truth: LabelMap,
    pub class_names: Vec<String>,
}

pub fn load_scene(cfg: &PipelineConfig) -> Result<Scene> {
    match &cfg.input {
        Input::Files { coherency, labels } => {
            let image = load_coherency(coherency)?;
            let truth = load_labels(labels)?;
            if image.height() != truth.height() || image.width() != truth.width() {
                return Err(Error::invalid("coherency and label files differ in size"));
            }
            let class_names = eval::default_class_names(truth.num_classes() as usize);
            Ok(Scene {
                image,
                truth,
                class_names,
            })
        }
        Input::Synthetic(spec) => {
            let mut spec = spec.clone();
            spec.rng_seed = cfg.scene_seed();
            let (image, truth) = generate_scene(&spec)?;
            let class_names = spec.classes.iter().map(|c| c.name.clone()).collect();
            Ok(Scene {
                image,
                truth,
                class_names,
            })
        }
    }
}

/// Classifier input for the given mode.
pub fn extract_features(
    raw: &FeatureCube,
    mode: FeatureMode,
    levels: usize,
) -> Result<FeatureCube> {
    match mode {
        FeatureMode::Raw => Ok(raw.clone()),
        FeatureMode::Dwt2d => wavelet_features(raw, &DwtPlan::spatial(levels)),
        FeatureMode::Dwt3d => wavelet_features(raw, &DwtPlan::volumetric(levels)),
    }
}

/// Short stable fingerprint of a training index set.
pub fn index_set_hash(indices: &[usize]) -> String {
    let mut hasher = Sha256::new();
    for &i in indices {
        hasher.update((i as u64).to_le_bytes());
    }
    hasher
        .finalize()
        .iter()
        .take(8)
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// MRF refinement of a probability field.
pub fn refine(
    probs: &ProbabilityField,
    pauli: &PauliField,
    alpha_s: f64,
    kernel: Kernel,
    bp: &BpConfig,
) -> Result<(LabelMap, BpDiagnostics, Sigma)> {
    let (problem, sigma) = MrfProblem::from_probabilities(probs, pauli, alpha_s, kernel)?;
    let (labels, diag) = bp_solve(&problem, bp)?;
    Ok((labels, diag, sigma))
}

/// Everything a pipeline run produced.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub report: EvalReport,
    pub labels: LabelMap,
    pub truth: LabelMap,
    pub train_set: TrainingSet,
    pub model: LinearModel,
    pub train_report: TrainReport,
    pub probabilities: ProbabilityField,
    pub bp: Option<BpDiagnostics>,
    pub sigma: Option<Sigma>,
    pub feature_dim: usize,
}

#[derive(Debug, Serialize)]
struct BpSummary<'a> {
    #[serde(flatten)]
    diagnostics: &'a BpDiagnostics,
    sigma: f64,
    flat_image: bool,
}

impl PipelineOutput {
    /// metrics.json contents.
    pub fn metrics_json(&self, cfg: &PipelineConfig) -> String {
        let per_class: IndexMap<&str, Option<f64>> = self
            .report
            .class_names
            .iter()
            .map(String::as_str)
            .zip(self.report.per_class_ca.iter().copied())
            .collect();
        let timing = if cfg.timing_in_metrics {
            self.report.timing_s.clone()
        } else {
            IndexMap::new()
        };
        let bp = self.bp.as_ref().map(|d| {
            let mut d = d.clone();
            if !cfg.timing_in_metrics {
                d.sweep_timing_s.clear();
            }
            let sigma = self.sigma.expect("sigma accompanies bp diagnostics");
            serde_json::to_value(BpSummary {
                diagnostics: &d,
                sigma: sigma.value,
                flat_image: sigma.flat,
            })
            .expect("diagnostics serialize")
        });
        let value = json!({
            "per_class_ca": per_class,
            "overall_ca": self.report.overall_ca,
            "confusion": self.report.confusion,
            "timing_s": timing,
            "bp": bp,
            "feature_mode": cfg.feature_mode.to_string(),
            "feature_dim": self.feature_dim,
            "mrf": cfg.mrf,
            "alpha_s": cfg.alpha_s,
            "kernel": cfg.kernel.to_string(),
            "lambda": self.train_report.lambda,
            "train_pixels": self.train_set.len(),
            "train_index_hash": index_set_hash(&self.train_set.indices),
            "evaluated_pixels": self.report.evaluated_pixels,
            "evaluation": "labeled pixels excluding training pixels",
        });
        let mut text = serde_json::to_string_pretty(&value).expect("metrics serialize");
        text.push('\n');
        text
    }

    fn timing_json(&self) -> String {
        let value = json!({
            "timing_s": self.report.timing_s,
            "bp_sweep_timing_s": self.bp.as_ref().map(|d| d.sweep_timing_s.clone()),
        });
        serde_json::to_string_pretty(&value).expect("timing serializes") + "\n"
    }

    /// Write labels.png, metrics.json, model.plm and timing.json.
    pub fn write_artifacts(&self, cfg: &PipelineConfig, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        export_label_png(&self.labels, &DEFAULT_PALETTE, dir.join("labels.png"))?;
        fs::write(dir.join("metrics.json"), self.metrics_json(cfg))?;
        save_model(&self.model, dir.join("model.plm"))?;
        fs::write(dir.join("timing.json"), self.timing_json())?;
        Ok(())
    }
}

fn timed<T>(timing: &mut IndexMap<String, f64>, stage: &str, f: impl FnOnce() -> T) -> T {
    let start = Instant::now();
    let out = f();
    timing.insert(stage.to_string(), start.elapsed().as_secs_f64());
    out
}

fn train_config(cfg: &PipelineConfig) -> TrainConfig {
    TrainConfig {
        rng_seed: cfg.train_seed(),
        ..cfg.train.clone()
    }
}

/// Run every stage and, when `out_dir` is set, write the artifacts.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    let mut timing = IndexMap::new();
    let scene = timed(&mut timing, "load", || load_scene(cfg)).stage("load")?;
    let raw = timed(&mut timing, "raw_features", || {
        extract_raw_features(&scene.image)
    });
    let features = timed(&mut timing, "features", || {
        extract_features(&raw, cfg.feature_mode, cfg.levels)
    })
    .stage("features")?;
    let train_cfg = train_config(cfg);
    let train_set = timed(&mut timing, "sample", || {
        sample_training_set(&scene.truth, &train_cfg)
    })
    .stage("sample")?;
    let (model, train_report) = timed(&mut timing, "train", || {
        train_with_report(&features, &train_set, &train_cfg)
    })
    .stage("train")?;
    let probabilities = timed(&mut timing, "predict", || {
        predict_probabilities(&model, &features)
    })
    .stage("predict")?;

    let (labels, bp, sigma) = if cfg.mrf {
        let pauli = extract_pauli(&scene.image);
        let (labels, diag, sigma) = timed(&mut timing, "mrf", || {
            refine(&probabilities, &pauli, cfg.alpha_s, cfg.kernel, &cfg.bp)
        })
        .stage("mrf")?;
        (labels, Some(diag), Some(sigma))
    } else {
        (probabilities.argmax_labels(), None, None)
    };

    let mut report = evaluate(&labels, &scene.truth, &train_set.indices).stage("evaluate")?;
    report.class_names = scene.class_names.clone();
    report.timing_s = timing;

    let output = PipelineOutput {
        report,
        labels,
        truth: scene.truth,
        feature_dim: features.channels(),
        train_set,
        model,
        train_report,
        probabilities,
        bp,
        sigma,
    };
    if let Some(dir) = &cfg.out_dir {
        output.write_artifacts(cfg, dir).stage("export")?;
    }
    Ok(output)
}

/// One row of the ablation table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub name: String,
    pub feature_mode: FeatureMode,
    pub mrf: bool,
    pub feature_dim: usize,
    pub overall_ca: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub train_pixels: usize,
    pub train_index_hash: String,
    pub alpha_s: f64,
    pub notes: Vec<String>,
}

impl AblationReport {
    pub fn overall(&self, name: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.name == name)
            .map(|r| r.overall_ca)
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<14} {:>8} {:>5} {:>11}\n",
            "config", "features", "mrf", "overall_ca"
        );
        for row in &self.rows {
            out.push_str(&format!(
                "{:<14} {:>8} {:>5} {:>10.2}%\n",
                row.name,
                row.feature_dim,
                if row.mrf { "on" } else { "off" },
                row.overall_ca
            ));
        }
        out.push_str(&format!(
            "training pixels: {} (index hash {})\n",
            self.train_pixels, self.train_index_hash
        ));
        out
    }
}

/// Intermediate results kept for inspection.
#[derive(Debug, Clone)]
pub struct Ablation {
    pub report: AblationReport,
    pub truth: LabelMap,
    pub train_set: TrainingSet,
    pub pauli: PauliField,
    /// Probability field per classifier configuration (raw, dwt2d, dwt3d).
    pub probabilities: Vec<(FeatureMode, ProbabilityField)>,
    /// Final label map per table row, in row order.
    pub labels: Vec<LabelMap>,
    pub bp: BpDiagnostics,
}

impl Ablation {
    pub fn probabilities_for(&self, mode: FeatureMode) -> &ProbabilityField {
        &self
            .probabilities
            .iter()
            .find(|(m, _)| *m == mode)
            .expect("every mode is run")
            .1
    }
}

/// Raw-only, 2D wavelet, 3D wavelet and 3D wavelet + MRF on one scene with
/// one shared training sample. The MRF row refines the 3D-wavelet
/// classifier's probabilities with the configured `alpha_s`.
pub fn ablation_harness(base: &PipelineConfig) -> Result<Ablation> {
    base.validate()?;
    let scene = load_scene(base).stage("load")?;
    let raw = extract_raw_features(&scene.image);
    let train_cfg = train_config(base);
    let train_set = sample_training_set(&scene.truth, &train_cfg).stage("sample")?;

    let mut rows = Vec::new();
    let mut probabilities = Vec::new();
    let mut labels = Vec::new();
    let names = [
        (FeatureMode::Raw, "raw"),
        (FeatureMode::Dwt2d, "dwt2d"),
        (FeatureMode::Dwt3d, "dwt3d"),
    ];
    for (mode, name) in names {
        let features = extract_features(&raw, mode, base.levels).stage("features")?;
        let model = train_with_report(&features, &train_set, &train_cfg)
            .stage("train")?
            .0;
        let probs = predict_probabilities(&model, &features).stage("predict")?;
        let pred = probs.argmax_labels();
        let report = evaluate(&pred, &scene.truth, &train_set.indices).stage("evaluate")?;
        rows.push(AblationRow {
            name: name.to_string(),
            feature_mode: mode,
            mrf: false,
            feature_dim: features.channels(),
            overall_ca: report.overall_ca,
        });
        probabilities.push((mode, probs));
        labels.push(pred);
    }

    let pauli = extract_pauli(&scene.image);
    let dwt3d = &probabilities[2].1;
    let (refined, bp, _) =
        refine(dwt3d, &pauli, base.alpha_s, base.kernel, &base.bp).stage("mrf")?;
    let report = evaluate(&refined, &scene.truth, &train_set.indices).stage("evaluate")?;
    rows.push(AblationRow {
        name: "dwt3d+mrf".to_string(),
        feature_mode: FeatureMode::Dwt3d,
        mrf: true,
        feature_dim: rows[2].feature_dim,
        overall_ca: report.overall_ca,
    });
    labels.push(refined);

    let notes = vec![
        "accuracy over labeled pixels excluding the shared training sample".to_string(),
        format!(
            "dwt2d keeps {} height/width bands per channel, dwt3d keeps {}",
            DwtPlan::spatial(base.levels).subbands().len(),
            DwtPlan::volumetric(base.levels).subbands().len()
        ),
    ];
    let report = AblationReport {
        rows,
        train_pixels: train_set.len(),
        train_index_hash: index_set_hash(&train_set.indices),
        alpha_s: base.alpha_s,
        notes,
    };
    Ok(Ablation {
        report,
        truth: scene.truth,
        train_set,
        pauli,
        probabilities,
        labels,
        bp,
    })
}
