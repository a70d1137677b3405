//! Polarimetric SAR semantic segmentation.
//!
//! The pipeline turns a grid of 3x3 coherency matrices into a class label
//! map in four steps:
//!
//! 1. seven raw indicators per pixel ([`coherency::extract_raw_features`]),
//! 2. a two-level undecimated 3D Haar decomposition of that cube with
//!    mean-filtered band magnitudes as contextual features ([`dwt`]),
//! 3. per-pixel class probabilities from a multinomial linear classifier
//!    ([`classifier`]),
//! 4. edge-aware label smoothing by min-sum belief propagation on the
//!    4-connected grid ([`mrf`]).
//!
//! [`synth`] generates speckled multi-class scenes for experiments and
//! [`pipeline`] wires the stages together.

pub mod classifier;
pub mod coherency;
pub mod cube;
pub mod dwt;
pub mod error;
pub mod labels;
pub mod mrf;
pub mod pipeline;
pub mod synth;

pub use classifier::{LinearModel, ProbabilityField, TrainConfig, TrainingSet};
pub use coherency::{Coherency, CoherencyImage, PauliField};
pub use cube::FeatureCube;
pub use error::{Error, Result};
pub use labels::LabelMap;
pub use mrf::{BpConfig, BpDiagnostics, Kernel, MrfProblem};
pub use pipeline::{FeatureMode, PipelineConfig};
pub use synth::{ClassModel, Layout, SceneSpec};
