//! Core of the slice-to-volume registration annotation workbench.
//!
//! Modules, bottom-up:
//!
//! - [`geometry`]: rigid transforms, slice poses, pixel/world mappings.
//! - [`imgmodel`]: volumes, slices, masks.
//! - [`nifti_io`]: NIfTI-1 and transform CSV files.
//! - [`resample`], [`masking`], [`metrics`]: the per-slice processing steps.
//! - [`history`]: per-slice undo/redo/optimize/reset.
//! - [`dataset`]: configuration, dataset scanning and case bundles.
//! - [`session`]: one loaded case and the actions applied to it.
//! - [`render`]: grayscale windowing, overlays, checkerboards, PNG, 3D scene.
//! - [`eval`]: batch evaluation procedures and the synthetic phantom.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod history;
pub mod imgmodel;
pub mod masking;
pub mod metrics;
pub mod nifti_io;
pub mod render;
pub mod resample;
pub mod session;

pub use error::{Error, Result};
