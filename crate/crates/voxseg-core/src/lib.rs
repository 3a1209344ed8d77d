//! Core algorithms for a desk-scale semi-supervised liver-segmentation
//! pipeline on volumetric images.
//!
//! Everything in this crate is pure computation over in-memory data: 3D
//! volumes with physical voxel spacing, histogram-based appearance transfer,
//! a small trainable 3D convolutional backbone with analytic gradients,
//! mean-teacher training, pseudo-label fine-tuning, continual test-time
//! adaptation, morphological post-processing and physical-space metrics.
//! File formats, manifests and the command-line front end live in the
//! companion `voxseg` crate.
//!
//! The crate is `no_std`-compatible (with `alloc`); the default `std` feature
//! only forwards to dependencies. All randomized operations take explicit
//! seeded generators and are bit-reproducible for a given seed on a given
//! platform.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod config;
pub mod contrast;
pub mod error;
pub(crate) mod fm;
pub mod hist;
pub mod metrics;
pub mod morph;
pub mod nn;
pub mod phantom;
pub mod pseudo;
pub mod rng;
pub mod ssim;
pub mod teacher;
pub mod tta;
pub mod volume;

pub use config::{AugmentConfig, TrainConfig, TtaConfig};
pub use error::CoreError;
pub use volume::{ChannelVolume, Mask, Volume};

/// Crate-wide result type.
pub type Result<T> = core::result::Result<T, CoreError>;
