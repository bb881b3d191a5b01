//! Active-learning cycles against a ground-truth oracle, evaluation metrics,
//! synthetic scenes and run configuration.

pub mod config;
pub mod experiment;
pub mod metrics;
pub mod scene;

pub use config::{RunConfig, Strategy};
pub use experiment::{run_experiment, seed_labeled_set, CycleRecord, Experiment, RunLog, Summary};
pub use metrics::{evaluate, Metrics};
pub use scene::{generate_scene, SceneSpec};
