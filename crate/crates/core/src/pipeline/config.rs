use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::classifier::TrainConfig;
use crate::error::{Error, Result};
use crate::mrf::{BpConfig, Kernel};
use crate::synth::{default_class_bank, Layout, SceneSpec};

/// Which features feed the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    /// The seven raw indicators.
    Raw,
    /// Wavelet bands over height and width only.
    Dwt2d,
    /// Wavelet bands over height, width and channel.
    #[default]
    Dwt3d,
}

impl fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureMode::Raw => "raw",
            FeatureMode::Dwt2d => "dwt2d",
            FeatureMode::Dwt3d => "dwt3d",
        })
    }
}

impl FromStr for FeatureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(FeatureMode::Raw),
            "dwt2d" => Ok(FeatureMode::Dwt2d),
            "dwt3d" => Ok(FeatureMode::Dwt3d),
            other => Err(Error::Config(format!("unknown feature mode `{other}`"))),
        }
    }
}

/// Where the scene comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum Input {
    Files { coherency: PathBuf, labels: PathBuf },
    Synthetic(SceneSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub input: Input,
    pub feature_mode: FeatureMode,
    pub train: TrainConfig,
    pub alpha_s: f64,
    pub kernel: Kernel,
    pub mrf: bool,
    pub bp: BpConfig,
    /// Wavelet decomposition depth (debug override).
    pub levels: usize,
    pub out_dir: Option<PathBuf>,
    pub rng_seed: u64,
    /// Put wall-clock stage timings into metrics.json. Off by default so
    /// the file is a pure function of the configuration; timings always go
    /// to timing.json.
    pub timing_in_metrics: bool,
}

pub const DEFAULT_ALPHA_S: f64 = 5.0;

impl PipelineConfig {
    pub fn new(input: Input) -> Self {
        Self {
            input,
            feature_mode: FeatureMode::Dwt3d,
            train: TrainConfig::default(),
            alpha_s: DEFAULT_ALPHA_S,
            kernel: Kernel::Potts,
            mrf: true,
            bp: BpConfig::default(),
            levels: 2,
            out_dir: None,
            rng_seed: 0,
            timing_in_metrics: false,
        }
    }

    /// Default synthetic scene: 256x256, four bank classes on a Voronoi
    /// layout, four looks.
    pub fn default_scene(rng_seed: u64) -> SceneSpec {
        SceneSpec {
            height: 256,
            width: 256,
            classes: default_class_bank(4).expect("bank holds four classes"),
            layout: Layout::Voronoi { seeds: 24 },
            looks: 4,
            rng_seed,
        }
    }

    pub fn synthetic(rng_seed: u64) -> Self {
        let mut cfg = Self::new(Input::Synthetic(Self::default_scene(rng_seed)));
        cfg.rng_seed = rng_seed;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if !(self.alpha_s >= 0.0 && self.alpha_s.is_finite()) {
            return Err(Error::Config(
                "alpha_s must be a non-negative number".into(),
            ));
        }
        if self.levels == 0 {
            return Err(Error::Config("levels must be at least 1".into()));
        }
        if self.bp.max_sweeps == 0 || !(self.bp.eps >= 0.0) {
            return Err(Error::Config("invalid belief-propagation settings".into()));
        }
        if !(0.0..1.0).contains(&self.bp.damping) {
            return Err(Error::Config("damping must lie in [0, 1)".into()));
        }
        if let Input::Synthetic(spec) = &self.input {
            spec.validate()?;
        }
        Ok(())
    }

    /// Seeds handed to each randomized stage, all derived from `rng_seed`.
    pub fn scene_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn train_seed(&self) -> u64 {
        self.rng_seed ^ 0x9e37_79b9_7f4a_7c15
    }
}

/// Flat key/value configuration; every field is optional and overrides
/// the defaults. The same struct carries command-line overrides.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub seed: Option<u64>,
    pub feature_mode: Option<FeatureMode>,
    pub alpha_s: Option<f64>,
    pub kernel: Option<Kernel>,
    pub mrf: Option<bool>,
    pub out_dir: Option<PathBuf>,
    pub train_frac: Option<f64>,
    pub cv_samples: Option<usize>,
    pub cv_folds: Option<usize>,
    pub reg_grid: Option<Vec<f64>>,
    pub max_epochs: Option<usize>,
    pub tol: Option<f64>,
    pub max_sweeps: Option<usize>,
    pub eps: Option<f64>,
    pub damping: Option<f64>,
    pub levels: Option<usize>,
    pub timing_in_metrics: Option<bool>,

    pub coherency: Option<PathBuf>,
    pub labels: Option<PathBuf>,

    pub synth_height: Option<usize>,
    pub synth_width: Option<usize>,
    pub synth_classes: Option<usize>,
    pub synth_looks: Option<u32>,
    /// `rectangles` or `voronoi`.
    pub synth_layout: Option<String>,
    pub synth_voronoi_seeds: Option<usize>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Fields set in `other` win.
    pub fn merged(self, other: ConfigFile) -> ConfigFile {
        macro_rules! pick {
            ($($f:ident),*) => {
                ConfigFile { $($f: other.$f.or(self.$f)),* }
            };
        }
        pick!(
            seed,
            feature_mode,
            alpha_s,
            kernel,
            mrf,
            out_dir,
            train_frac,
            cv_samples,
            cv_folds,
            reg_grid,
            max_epochs,
            tol,
            max_sweeps,
            eps,
            damping,
            levels,
            timing_in_metrics,
            coherency,
            labels,
            synth_height,
            synth_width,
            synth_classes,
            synth_looks,
            synth_layout,
            synth_voronoi_seeds
        )
    }

    fn has_synth_keys(&self) -> bool {
        self.synth_height.is_some()
            || self.synth_width.is_some()
            || self.synth_classes.is_some()
            || self.synth_looks.is_some()
            || self.synth_layout.is_some()
            || self.synth_voronoi_seeds.is_some()
    }

    /// Scene description from the `synth_*` keys on top of the default scene.
    pub fn scene_spec(&self) -> Result<SceneSpec> {
        let seed = self.seed.unwrap_or(0);
        let mut spec = PipelineConfig::default_scene(seed);
        if let Some(h) = self.synth_height {
            spec.height = h;
        }
        if let Some(w) = self.synth_width {
            spec.width = w;
        }
        if let Some(k) = self.synth_classes {
            spec.classes = default_class_bank(k)?;
        }
        if let Some(n) = self.synth_looks {
            spec.looks = n;
        }
        let seeds = self.synth_voronoi_seeds.unwrap_or(24);
        spec.layout = match self.synth_layout.as_deref() {
            None | Some("voronoi") => Layout::Voronoi { seeds },
            Some("rectangles") => Layout::Rectangles,
            Some(other) => return Err(Error::Config(format!("unknown layout `{other}`"))),
        };
        Ok(spec)
    }

    pub fn to_pipeline(&self) -> Result<PipelineConfig> {
        let input = match (&self.coherency, &self.labels) {
            (Some(c), Some(l)) => {
                if self.has_synth_keys() {
                    return Err(Error::Config(
                        "give either input files or synth_* keys, not both".into(),
                    ));
                }
                Input::Files {
                    coherency: c.clone(),
                    labels: l.clone(),
                }
            }
            (None, None) => Input::Synthetic(self.scene_spec()?),
            _ => {
                return Err(Error::Config(
                    "coherency and labels must be given together".into(),
                ));
            }
        };
        let mut cfg = PipelineConfig::new(input);
        if let Some(seed) = self.seed {
            cfg.rng_seed = seed;
        }
        if let Some(v) = self.feature_mode {
            cfg.feature_mode = v;
        }
        if let Some(v) = self.alpha_s {
            cfg.alpha_s = v;
        }
        if let Some(v) = self.kernel {
            cfg.kernel = v;
        }
        if let Some(v) = self.mrf {
            cfg.mrf = v;
        }
        cfg.out_dir = self.out_dir.clone();
        let t = &mut cfg.train;
        if let Some(v) = self.train_frac {
            t.train_fraction = v;
        }
        if let Some(v) = self.cv_samples {
            t.cv_samples = v;
        }
        if let Some(v) = self.cv_folds {
            t.cv_folds = v;
        }
        if let Some(v) = &self.reg_grid {
            t.reg_grid = v.clone();
        }
        if let Some(v) = self.max_epochs {
            t.max_epochs = v;
        }
        if let Some(v) = self.tol {
            t.tol = v;
        }
        if let Some(v) = self.max_sweeps {
            cfg.bp.max_sweeps = v;
        }
        if let Some(v) = self.eps {
            cfg.bp.eps = v;
        }
        if let Some(v) = self.damping {
            cfg.bp.damping = v;
        }
        if let Some(v) = self.levels {
            cfg.levels = v;
        }
        if let Some(v) = self.timing_in_metrics {
            cfg.timing_in_metrics = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flat_keys() {
        let file = ConfigFile::parse(
            r#"
            seed = 7
            feature_mode = "dwt2d"
            alpha_s = 2.5
            kernel = "linear-label"
            mrf = false
            reg_grid = [0.1, 1.0]
            synth_looks = 8
            synth_layout = "rectangles"
            "#,
        )
        .unwrap();
        let cfg = file.to_pipeline().unwrap();
        assert_eq!(cfg.rng_seed, 7);
        assert_eq!(cfg.feature_mode, FeatureMode::Dwt2d);
        assert_eq!(cfg.kernel, Kernel::LinearLabel);
        assert!(!cfg.mrf);
        assert_eq!(cfg.train.reg_grid, vec![0.1, 1.0]);
        match cfg.input {
            Input::Synthetic(spec) => {
                assert_eq!(spec.looks, 8);
                assert_eq!(spec.layout, Layout::Rectangles);
                assert_eq!(spec.rng_seed, 7);
            }
            other => panic!("unexpected input {other:?}"),
        }
    }

    #[test]
    fn unknown_key_is_rejected() {
        assert!(ConfigFile::parse("colour = 3").is_err());
    }

    #[test]
    fn overrides_win() {
        let base = ConfigFile {
            alpha_s: Some(1.0),
            seed: Some(3),
            ..Default::default()
        };
        let flags = ConfigFile {
            alpha_s: Some(9.0),
            ..Default::default()
        };
        let merged = base.merged(flags);
        assert_eq!(merged.alpha_s, Some(9.0));
        assert_eq!(merged.seed, Some(3));
    }

    #[test]
    fn files_and_scene_are_exclusive() {
        let both = ConfigFile {
            coherency: Some("a.pt3".into()),
            labels: Some("a.plb".into()),
            synth_looks: Some(2),
            ..Default::default()
        };
        assert!(both.to_pipeline().is_err());
        let half = ConfigFile {
            coherency: Some("a.pt3".into()),
            ..Default::default()
        };
        assert!(half.to_pipeline().is_err());
    }

    #[test]
    fn feature_mode_parsing() {
        assert_eq!("raw".parse::<FeatureMode>().unwrap(), FeatureMode::Raw);
        assert!("dwt4d".parse::<FeatureMode>().is_err());
    }
}
