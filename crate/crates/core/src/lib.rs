//! Stereo video attention building blocks.
//!
//! * [`tensor`], [`rng`], [`gradcheck`], [`container`]: dense arrays, seeded
//!   randomness, finite differences and the tensor file format.
//! * [`camera`], [`trajectory`]: pinhole cameras, rectified rigs and random
//!   camera trajectories.
//! * [`rope`]: factorized video RoPE with an appended camera block.
//! * [`attention`]: full 4D attention over both views, its decomposition into
//!   intra-view and row attention, a masked dense oracle and KV-cached causal
//!   rollout.
//! * [`flops`]: analytic and counted attention cost.
//! * [`dit`]: a small rectified-flow stereo diffusion transformer trained on
//!   synthetic rectified scenes.
//! * [`harness`]: the subcommands behind the `stereoworld` binary.
//! * [`parallel`]: ordered fan-out capped by `SW_THREADS`.

pub mod attention;
pub mod camera;
pub mod container;
pub mod dit;
pub mod error;
pub mod flops;
pub mod gradcheck;
pub mod harness;
pub mod parallel;
pub mod rng;
pub mod rope;
pub mod tensor;
pub mod trajectory;

pub use error::{Error, Result};
