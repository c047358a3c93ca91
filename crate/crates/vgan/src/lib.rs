//! File formats, checkpoints and the command-line harness around
//! [`vgan_core`].
//!
//! - [`volume`]: `VVOL` raw volumes.
//! - [`checkpoint`]: `VGAN` parameters and `VGST` optimizer state.
//! - [`dataset`]: JSON manifests and phantom dataset generation.
//! - [`reports`]: metric log and score CSVs.
//! - [`slices`]: PPM slice export.
//! - [`run`], [`inference`], [`cli`]: run configuration, whole-volume
//!   prediction and the subcommands.

mod bytes;
pub mod checkpoint;
pub mod cli;
pub mod dataset;
mod error;
pub mod inference;
pub mod reports;
pub mod run;
pub mod slices;
pub mod volume;

pub use bytes::write_atomic;
pub use error::{FormatError, Result};
