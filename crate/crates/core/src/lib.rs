//! Desk-scale unified instruction-driven image and video editing.
//!
//! The stack, bottom to top:
//! - [`tensor`]: dense tensors with reverse-mode autodiff and an AdamW step;
//! - [`codec`]: an exact orthonormal patch codec standing in for a VAE;
//! - [`vocab`] / [`bridge`]: a toy multimodal transformer with modality-tagged
//!   learnable query tokens, LoRA adapters, and four bridge designs producing
//!   conditioning tokens;
//! - [`dit`]: a diffusion transformer trained and sampled under rectified-flow
//!   flow matching, conditioned by cross-attention, additive source latents,
//!   and concatenated reference latents;
//! - [`trainer`]: three-stage training orchestration with freeze masks, mixed
//!   image/video scheduling, and bit-exact checkpoint resume;
//! - [`synthworld`]: a procedural paired-editing data world and benchmark
//!   generator;
//! - [`evalbench`]: programmatic metrics, comparative experiments, and CSV
//!   reporting.

pub mod bridge;
pub mod checkpoint;
pub mod codec;
pub mod config;
pub mod dit;
pub mod error;
pub mod evalbench;
pub mod media_io;
pub mod model;
pub mod nn;
pub mod optim;
pub mod params;
pub mod rng;
pub mod synthworld;
pub mod tensor;
pub mod trainer;
pub mod vocab;

pub use error::{Error, ErrorKind, Result};
