//! Single-layer multi-head self-attention and state-space sequence models,
//! trained to predict the next OFDM slot of channel state information over a
//! tapped-delay-line UMi/UMa surrogate channel.
//!
//! The crate is organised bottom-up:
//!
//! - [`numkit`]: dense real/complex matrices, a small reverse-mode tape,
//!   Adam and a finite-difference gradient checker.
//! - [`attention`]: one multi-head self-attention layer with a FLOP counter.
//! - [`ssm`]: diagonal LTI state-space layer (scan, kernel, convolution) and
//!   an optional input-selective variant.
//! - [`channel`]: per-slot CSI grid generation, AWGN and the binary grid container.
//! - [`task`]: grid/sequence mapping and (slot i, slot i+1) dataset construction.
//! - [`trainer`]: MSE training loop, evaluation, checkpoints and run records.

pub mod attention;
pub mod channel;
pub mod error;
pub mod numkit;
pub mod rng;
pub mod ssm;
pub mod task;
pub mod trainer;

pub use error::{Error, Result};
