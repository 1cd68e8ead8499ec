//! Infection-aware DRR generation from labeled CT volumes.
//!
//! The library turns a CT volume paired with a three-category mask
//! (background / lung / infection) into digitally reconstructed radiographs
//! whose pixel values weight each category separately, together with
//! pixel-level infection labels derived from per-ray contribution rates.
//! On top of the projector sit a deterministic dataset builder (randomized
//! poses, weight/threshold sweeps, PNG + manifest output) and sensitivity
//! analytics (infected proportions, weight-equivalent proportions,
//! contribution-rate histograms).

pub mod analysis;
pub mod dataset;
pub mod error;
pub mod export;
pub mod geometry;
mod nifti;
pub mod projector;
mod rawvol;
pub mod volume;

pub use error::{Error, Result};
