//! Federated learning for hybrid beamforming in mm-Wave massive MIMO.
//!
//! The crate is organised bottom-up:
//!
//! - [`channel`] synthesizes clustered uniform-linear-array channels.
//! - [`dataset`] turns channels into labelled three-channel tensors and
//!   shards them across simulated users.
//! - [`cnn`] is a small from-scratch network library with exact
//!   backpropagation and a finite-difference gradient checker.
//! - [`fedtrain`] drives centralized and federated training through a
//!   registry of [`fedtrain::TrainingScheme`]s.
//! - [`beamform`] builds hybrid precoders from predicted sectors, designs
//!   zero-forcing baseband stages and scores them by sum-rate through a
//!   registry of [`beamform::BeamformingMethod`]s.

pub mod beamform;
pub mod channel;
pub mod cnn;
pub mod dataset;
pub mod error;
pub mod fedtrain;
pub mod rng;

pub use error::{Error, Result};
