//! Semi-supervised deep Q-learning for grid-based RSSI indoor localization.
//!
//! A semi-supervised variational autoencoder (the "M2" model) supplies class
//! posteriors for unlabeled scans; a deep Q-network learns to walk a grid
//! toward the cell a scan was taken in, using the VAE's pseudo-labels to
//! reward unlabeled episodes.

pub mod agent;
pub mod environment;
pub mod error;
pub mod features;
pub mod harness;
pub mod nn;
pub mod rng;
pub mod vae;

pub use error::{Error, Result};
