//! File formats, training driver, parallel ensembles and the command line for
//! [`geogan_core`].
//!
//! * [`gvox`]: voxel volumes
//! * [`gckp`] and [`checkpoint`]: parameter checkpoints and their mapping to training state
//! * [`pgm`]: slice images
//! * [`train`]: training with periodic checkpoints and a CSV log
//! * [`ensemble`]: multi-threaded ensembles and their output files
//! * [`manifest`]: per-run provenance records
//! * [`cli`]: the `geogan` binary

pub mod checkpoint;
pub mod cli;
pub mod ensemble;
pub mod error;
pub mod gckp;
pub mod gvox;
pub mod manifest;
pub mod pgm;
pub mod train;

pub use error::{Error, Result};
