//! Teacher/student GAN distillation on paired two-modality phantom images.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: dense `f64` tensors and a recorded computation graph with
//!   reverse-mode gradients.
//! * [`nn`]: layer specifications, seeded parameter initialisation,
//!   temperature softmax and cross-entropy.
//! * [`gan`]: teacher/student architectures, adversarial losses (standard
//!   and Wasserstein), optimizers, training and checkpoints.
//! * [`distill`]: soft/hard label losses and student training against a
//!   frozen teacher.
//! * [`metrics`]: spatial frequency, SSIM and SCD plus CSV reports.
//! * [`data`]: synthetic phantom pairs, splits, flips, PGM IO, resizing.
//! * [`harness`]: the config-driven `kgan` command line.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod distill;
mod error;
pub mod gan;
pub mod harness;
pub mod image;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use image::ImageGray;
