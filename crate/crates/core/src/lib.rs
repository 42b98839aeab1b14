//! Building-footprint archetype learning for urban energy estimation.
//!
//! The pipeline rasterizes footprints into a three-window image stack, learns
//! a vector-quantized convolutional autoencoder constrained by supervised
//! heads, clusters the latents into per-class archetypes and turns them into
//! area-weighted energy estimates.

pub mod cluster;
pub mod energy;
pub mod error;
pub mod exec;
pub mod geometry;
pub mod ingest;
pub mod io;
pub mod nn;
pub mod plot;
pub mod synth;
pub mod tasks;
pub mod vq;

pub use error::{MarlError, Result};
pub use exec::Execution;
