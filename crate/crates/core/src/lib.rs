//! Conditional simulation of 3D voxel geomodels with generative adversarial networks.
//!
//! The crate is `no_std` + `alloc` with the default `std` feature switched off. It
//! contains the whole numerical pipeline:
//!
//! * [`tensor`]: reverse-mode autodiff with second-order support and 3D convolutions
//! * [`arch`]: the DCGAN-style 3D generator and the Wasserstein critic
//! * [`trainer`]: WGAN training with a one-sided gradient penalty
//! * [`conditioner`]: latent-vector optimisation against masked conditioning data
//! * [`ensemble`]: per-voxel mean/std maps and influence profiles of ensembles
//! * [`synthetic`]: desk-scale channel and granular training images
//!
//! File formats, the CLI and worker pools live in the companion `geogan` crate.
#![cfg_attr(not(feature = "std"), no_std)]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod arch;
pub mod conditioner;
pub mod ensemble;
pub mod error;
pub mod optim;
pub mod scalar;
pub mod synthetic;
pub mod tensor;
pub mod trainer;
pub mod volume;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::{Graph, NdArray, Tensor};
pub use volume::{Axis, DType, Mask, Volume, VolumeData};
