//! Superpoint-based active learning for point cloud semantic segmentation.
//!
//! The pipeline groups a cloud into superpoints, scores them with
//! class-balanced margin uncertainty, picks a spatially and structurally
//! diverse batch through a superpoint graph plus farthest point sampling,
//! and annotates the batch under a click budget with noise-aware
//! iterative labeling. [`harness`] wires these stages into full
//! acquisition cycles against a ground-truth oracle.

pub mod acquisition;
pub mod cloud;
pub mod error;
pub mod graph;
pub mod harness;
pub mod labeling;
pub mod learner;
pub mod partition;
pub mod spatial;

pub use cloud::{Point, PointCloud, Prediction, SuperpointPartition, ValidationReport};
pub use error::{Error, Result};
