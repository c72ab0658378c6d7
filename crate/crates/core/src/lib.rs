//! Simulation-to-real pipeline for cardiac MR imagery.
//!
//! Stages, in pipeline order:
//!
//! - [`phantom`]: procedural cardiac label volumes, mid-ventricular slicing, LV volumes.
//! - [`simulate`]: steady-state SPGR / bSSFP signal models and k-space noise.
//! - [`preprocess`]: heart bounding-box crop, centre crop, bilinear resize, `[0, 1]` scaling.
//! - [`tensor`]: a small reverse-mode autodiff engine used by the translation networks.
//! - [`translate`]: one-sided contrastive unpaired translation (PatchNCE + LSGAN).
//! - [`metrics`]: Fréchet feature distance, Dice, Hausdorff.
//! - [`pipeline`]: config-driven end-to-end experiments with a reproducibility manifest.
//!
//! Data-parallel loops go through [`par`], which falls back to plain iterators when the
//! `parallel` feature is disabled. Results are bitwise identical either way.

pub mod config;
pub mod image;
pub mod io;
pub mod metrics;
pub mod par;
pub mod phantom;
pub mod pipeline;
pub mod preprocess;
pub mod seed;
pub mod simulate;
pub mod tensor;
pub mod toy;
pub mod translate;

pub use image::Image2D;
pub use phantom::{LabelSlice, LabelVolume, Phase, TissueClass};
