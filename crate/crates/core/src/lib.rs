//! Differentiable volumetric deep-learning engine and the transformer-based
//! adversarial segmentation model built on top of it.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, checkpoints and the
//! command-line harness live in the companion `vgan` crate.
//!
//! Layout:
//! - [`tensor`], [`autodiff`], [`optim`], [`gradcheck`]: dense tensors, the
//!   define-by-run tape, Adam and the central-difference oracle.
//! - [`ops`]: convolutions, normalizations, activations, attention.
//! - [`generator`], [`discriminator`]: the two networks.
//! - [`losses`], [`training`]: segmentation/adversarial objectives and the
//!   alternating update loop.
//! - [`data`], [`metrics`]: phantoms, label remapping, augmentation, scores.

#![no_std]

extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

pub mod autodiff;
pub mod data;
pub mod discriminator;
mod error;
pub mod generator;
pub mod gradcheck;
pub mod layers;
pub mod losses;
pub mod metrics;
pub mod ops;
pub mod optim;
pub mod params;
mod real;
pub mod tensor;
pub mod training;

pub use autodiff::{Gradients, Graph, Var};
pub use error::{Error, Result};
pub use params::{ParamId, ParamStore};
pub use real::Real;
pub use tensor::Tensor;
