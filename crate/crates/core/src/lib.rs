//! Desk-scale multi-view geometry distillation pipeline.
//!
//! The crate covers synthetic scene generation with analytic ground truth,
//! a multi-view geometry transformer (teacher and compressed student), the
//! output-matching distillation trainer, two imitation-learning policy heads
//! conditioned on the frozen student's latent features, a toy manipulation
//! environment, and the 3D reconstruction metric suite.

pub mod encoder;
pub mod error;
pub mod heads;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod scene;

pub use error::{Error, Result};
