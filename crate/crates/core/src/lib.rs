//! Functional neural networks: every trainable tensor is a linear function
//! of a task parameter, `w = t·(θb − θa) + θa` with
//! `t = (H(x) − H(x_a)) / (H(x_b) − H(x_a))`.
//!
//! [`func_param`] holds the mechanism, [`model`] assembles residual CNNs from
//! it, [`data`] provides the denoising and deblocking tasks, [`train`] the
//! optimization loop and [`eval`] metrics, checkpoints and the ablation
//! harness.

pub mod data;
pub mod error;
pub mod eval;
pub mod func_param;
pub mod model;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
