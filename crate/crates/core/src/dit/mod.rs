//! Toy rectified-flow stereo video model.
//!
//! A small transformer over the tokens of a stereo latent grid, trained on
//! synthetic scenes of textured planes to continue a video from its first
//! stereo frame. It exists to exercise the attention and camera encodings
//! end to end, with exact ground truth available for every scene.

pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod flow;
pub mod model;
pub mod params;
pub mod scene;
pub mod train;

pub use checkpoint::{load_model, read_manifest, Manifest};
pub use config::{InitStrategy, ToyModelConfig};
pub use eval::{disparity_checks, estimate_disparity, DisparityCheck};
pub use flow::{sample, FlowState, SampleOptions, VelocityField};
pub use model::ToyModel;
pub use params::{init_params, parameter_layout, ModelParams};
pub use scene::{generate_scene, SceneConfig, SyntheticScene};
pub use train::{gradient_check, Adam, Example, GradCheckReport, LogRecord, TrainConfig, Trainer};
