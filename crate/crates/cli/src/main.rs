use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use polsar::classifier::{
    load_model, predict_probabilities, sample_training_set, save_model, train_with_report,
    TrainingSet,
};
use polsar::coherency::{extract_pauli, extract_raw_features, load_coherency, save_coherency};
use polsar::cube::{load_features, save_features};
use polsar::labels::{load_labels, save_labels};
use polsar::mrf::Kernel;
use polsar::pipeline::{
    ablation_harness, evaluate, export_label_png, extract_features, index_set_hash, refine,
    run_pipeline, ConfigFile, FeatureMode, Input, PipelineConfig, DEFAULT_PALETTE,
};
use polsar::synth::generate_scene;

#[derive(Parser, Debug)]
#[command(
    name = "polsar",
    version,
    about = "PolSAR segmentation with 3D wavelet features and MRF refinement"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalFlags,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct GlobalFlags {
    /// Flat key/value config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long = "alpha-s", global = true)]
    alpha_s: Option<f64>,
    /// raw, dwt2d or dwt3d
    #[arg(long = "feature-mode", global = true)]
    feature_mode: Option<String>,
    /// Skip MRF refinement.
    #[arg(long = "no-mrf", global = true)]
    no_mrf: bool,
    #[arg(long = "out-dir", global = true)]
    out_dir: Option<PathBuf>,
    /// potts or linear-label
    #[arg(long, global = true)]
    kernel: Option<String>,
    #[arg(long = "train-frac", global = true)]
    train_frac: Option<f64>,
    /// Override any config key, e.g. `--set max_sweeps=20`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic speckled scene (scene.pt3, truth.plb, truth.png).
    Synth(SynthArgs),
    /// Compute classifier features from a coherency file.
    Features {
        #[arg(long)]
        coherency: Option<PathBuf>,
        /// Wavelet levels (debug override).
        #[arg(long)]
        levels: Option<usize>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Sample training pixels and fit the classifier.
    Train {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Predict a label map, refined by the MRF unless --no-mrf.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
        /// Needed for the MRF edge weights.
        #[arg(long)]
        coherency: Option<PathBuf>,
    },
    /// Run the whole pipeline and write labels.png, metrics.json, model.plm.
    Segment {
        #[arg(long)]
        levels: Option<usize>,
    },
    /// Score a predicted label file against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// train_set.json written by `train`; its pixels are not scored.
        #[arg(long = "train-set")]
        train_set: Option<PathBuf>,
    },
    /// Compare raw, dwt2d, dwt3d and dwt3d+MRF on one shared training sample.
    Ablate,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    looks: Option<u32>,
    /// rectangles or voronoi
    #[arg(long)]
    layout: Option<String>,
    #[arg(long = "voronoi-seeds")]
    voronoi_seeds: Option<usize>,
}

fn settings(global: &GlobalFlags, extra: ConfigFile) -> Result<ConfigFile> {
    let base = match &global.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    let flags = ConfigFile {
        seed: global.seed,
        alpha_s: global.alpha_s,
        feature_mode: global
            .feature_mode
            .as_deref()
            .map(str::parse::<FeatureMode>)
            .transpose()?,
        kernel: global
            .kernel
            .as_deref()
            .map(str::parse::<Kernel>)
            .transpose()?,
        mrf: global.no_mrf.then_some(false),
        out_dir: global.out_dir.clone(),
        train_frac: global.train_frac,
        ..Default::default()
    };
    let mut merged = base.merged(extra);
    for item in &global.set {
        merged = merged.merged(parse_override(item)?);
    }
    Ok(merged.merged(flags))
}

/// One `key=value` override; bare words are retried as strings.
fn parse_override(item: &str) -> Result<ConfigFile> {
    let Some((key, value)) = item.split_once('=') else {
        bail!("--set expects KEY=VALUE, got `{item}`");
    };
    let (key, value) = (key.trim(), value.trim());
    ConfigFile::parse(&format!("{key} = {value}"))
        .or_else(|_| ConfigFile::parse(&format!("{key} = {value:?}")))
        .with_context(|| format!("bad override `{item}`"))
}

fn out_dir(file: &ConfigFile) -> Result<PathBuf> {
    let dir = file.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let g = &cli.global;

    match cli.command {
        Command::Synth(args) => {
            let file = settings(
                g,
                ConfigFile {
                    synth_height: args.height,
                    synth_width: args.width,
                    synth_classes: args.classes,
                    synth_looks: args.looks,
                    synth_layout: args.layout,
                    synth_voronoi_seeds: args.voronoi_seeds,
                    ..Default::default()
                },
            )?;
            let dir = out_dir(&file)?;
            let spec = file.scene_spec()?;
            let (image, truth) = generate_scene(&spec)?;
            save_coherency(&image, dir.join("scene.pt3"))?;
            save_labels(&truth, dir.join("truth.plb"))?;
            export_label_png(&truth, &DEFAULT_PALETTE, dir.join("truth.png"))?;
            info!(
                "wrote {}x{} scene with {} classes to {}",
                spec.height,
                spec.width,
                spec.classes.len(),
                dir.display()
            );
        }
        Command::Features {
            coherency,
            levels,
            output,
        } => {
            let file = settings(
                g,
                ConfigFile {
                    coherency,
                    levels,
                    ..Default::default()
                },
            )?;
            let Some(path) = &file.coherency else {
                bail!("--coherency is required");
            };
            let mode = file.feature_mode.unwrap_or_default();
            let image = load_coherency(path)?;
            let raw = extract_raw_features(&image);
            let feats = extract_features(&raw, mode, file.levels.unwrap_or(2))?;
            let output = match output {
                Some(p) => p,
                None => out_dir(&file)?.join("features.pfc"),
            };
            save_features(&feats, &output)?;
            info!(
                "{mode} features: {}x{}x{} -> {}",
                feats.height(),
                feats.width(),
                feats.channels(),
                output.display()
            );
        }
        Command::Train {
            features,
            labels,
            model,
        } => {
            let file = settings(
                g,
                ConfigFile {
                    labels,
                    ..Default::default()
                },
            )?;
            let Some(labels_path) = &file.labels else {
                bail!("--labels is required");
            };
            let feats = load_features(&features)?;
            let truth = load_labels(labels_path)?;
            let mut cfg = PipelineConfig::new(Input::Synthetic(PipelineConfig::default_scene(0)));
            apply_training(&file, &mut cfg)?;
            let mut train_cfg = cfg.train.clone();
            train_cfg.rng_seed = cfg.train_seed();
            let set = sample_training_set(&truth, &train_cfg)?;
            let (m, report) = train_with_report(&feats, &set, &train_cfg)?;
            let dir = out_dir(&file)?;
            let model_path = model.unwrap_or_else(|| dir.join("model.plm"));
            save_model(&m, &model_path)?;
            write_json(&dir.join("train_set.json"), &set)?;
            info!(
                "trained on {} pixels (hash {}), lambda = {}, model -> {}",
                set.len(),
                index_set_hash(&set.indices),
                report.lambda,
                model_path.display()
            );
        }
        Command::Predict {
            model,
            features,
            coherency,
        } => {
            let file = settings(g, ConfigFile::default())?;
            let m = load_model(&model)?;
            let feats = load_features(&features)?;
            let probs = predict_probabilities(&m, &feats)?;
            let dir = out_dir(&file)?;
            let labels = if file.mrf.unwrap_or(true) {
                let Some(path) = coherency else {
                    bail!("MRF refinement needs --coherency (or pass --no-mrf)");
                };
                let image = load_coherency(path)?;
                let mut cfg =
                    PipelineConfig::new(Input::Synthetic(PipelineConfig::default_scene(0)));
                apply_training(&file, &mut cfg)?;
                let (labels, diag, sigma) = refine(
                    &probs,
                    &extract_pauli(&image),
                    cfg.alpha_s,
                    cfg.kernel,
                    &cfg.bp,
                )?;
                write_json(
                    &dir.join("bp.json"),
                    &serde_json::json!({
                        "iterations": diag.iterations,
                        "final_delta": diag.final_delta,
                        "converged": diag.converged,
                        "energy": diag.energy,
                        "sweep_timing_s": diag.sweep_timing_s,
                        "sigma": sigma.value,
                        "flat_image": sigma.flat,
                    }),
                )?;
                info!(
                    "bp: {} iterations, energy {:.4}",
                    diag.iterations, diag.energy
                );
                labels
            } else {
                probs.argmax_labels()
            };
            save_labels(&labels, dir.join("labels.plb"))?;
            export_label_png(&labels, &DEFAULT_PALETTE, dir.join("labels.png"))?;
            info!("labels -> {}", dir.display());
        }
        Command::Segment { levels } => {
            let file = settings(
                g,
                ConfigFile {
                    levels,
                    ..Default::default()
                },
            )?;
            let mut cfg = file.to_pipeline()?;
            cfg.out_dir = Some(out_dir(&file)?);
            let output = run_pipeline(&cfg)?;
            println!("{}", output.metrics_json(&cfg).trim_end());
        }
        Command::Eval {
            pred,
            truth,
            train_set,
        } => {
            let file = settings(g, ConfigFile::default())?;
            let pred = load_labels(pred)?;
            let truth = load_labels(truth)?;
            let exclude = match train_set {
                Some(path) => {
                    let text = fs::read_to_string(&path)
                        .with_context(|| format!("reading {}", path.display()))?;
                    serde_json::from_str::<TrainingSet>(&text)?.indices
                }
                None => Vec::new(),
            };
            let report = evaluate(&pred, &truth, &exclude)?;
            let dir = out_dir(&file)?;
            let per_class: serde_json::Map<String, serde_json::Value> = report
                .class_names
                .iter()
                .cloned()
                .zip(report.per_class_ca.iter().map(|v| serde_json::json!(v)))
                .collect();
            let metrics = serde_json::json!({
                "per_class_ca": per_class,
                "overall_ca": report.overall_ca,
                "confusion": report.confusion,
                "timing_s": {},
                "bp": null,
                "evaluated_pixels": report.evaluated_pixels,
            });
            write_json(&dir.join("metrics.json"), &metrics)?;
            println!("{}", serde_json::to_string_pretty(&metrics)?);
        }
        Command::Ablate => {
            let file = settings(g, ConfigFile::default())?;
            let cfg = file.to_pipeline()?;
            let ablation = ablation_harness(&cfg)?;
            let dir = out_dir(&file)?;
            write_json(&dir.join("ablation.json"), &ablation.report)?;
            print!("{}", ablation.report.to_table());
        }
    }
    Ok(())
}

/// Copy training and MRF settings from the flat config onto `cfg`.
fn apply_training(file: &ConfigFile, cfg: &mut PipelineConfig) -> Result<()> {
    let resolved = ConfigFile {
        coherency: None,
        labels: None,
        ..file.clone()
    }
    .to_pipeline()?;
    cfg.train = resolved.train;
    cfg.rng_seed = resolved.rng_seed;
    cfg.alpha_s = resolved.alpha_s;
    cfg.kernel = resolved.kernel;
    cfg.bp = resolved.bp;
    Ok(())
}
