//! Tick-based tripartite model: perceptual encoder, executive attention
//! loop, oscillatory modulation, synchronization readout, certainty-gated
//! early exit, and the training loop around them.
//!
//! The crate is `no_std` and needs only `alloc`. File formats, dataset
//! readers, and the command-line front end live in the `tripartite` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod numerics;
pub mod auxiliary;
pub mod config;
pub mod control;
pub mod data;
mod error;
pub mod executive;
pub mod layers;
pub mod model;
pub mod perception;
pub mod synchrony;
pub mod training;

pub use config::{Flags, ModelConfig, StopPolicy, TrainConfig};
pub use error::{Error, Result};
pub use model::{Mode, Model};
