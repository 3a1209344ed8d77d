//! File formats, dataset plumbing and pipeline orchestration around
//! [`voxseg_core`].
//!
//! This crate owns everything that touches the filesystem: the MVOL volume
//! format, model checkpoints, dataset manifests, run configuration, CSV
//! logs and the `voxseg` command-line binary that wires the stages
//! together (synth / contrast-train / train / finetune / infer / adapt /
//! eval / style).

pub mod ckpt;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod manifest;
pub mod mvol;
pub mod phantom_io;
pub mod pipeline;
pub mod runconfig;

pub use error::{PipelineError, Result};
pub use runconfig::RunConfig;
