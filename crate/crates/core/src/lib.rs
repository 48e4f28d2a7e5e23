//! Detection of a fixed-position machine's active region in surveillance
//! video and classification of its on/off working state.
//!
//! The pipeline runs in two phases:
//!
//! * **Training** ([`pipeline::train`]): per-frame adaptive mixture
//!   background subtraction yields the largest moving blob of each frame;
//!   the blobs are reduced to candidate regions by area, spacing and a
//!   gray-difference score against an off-state reference frame; the final
//!   region is the candidate whose reference-frame corner-tracking feature
//!   separates best into two clusters across pyramid levels. The per-frame
//!   corner displacement (`dist`) and its windowed exponential average
//!   (`ewma`) are clustered into on/off labels and a linear SVM is fitted.
//! * **Detection** ([`pipeline::StateDetector`]): each incoming frame is
//!   matched against the frozen reference corners, reduced to the same two
//!   features and classified.

pub mod background;
pub mod classifier;
mod error;
pub mod features;
pub mod imgproc;
pub mod pipeline;
pub mod regions;
pub mod rfklt;
pub mod video;

pub use error::{Error, Result};
