//! Federated training of stateful-neuron networks whose clients sample time
//! at different resolutions.
//!
//! The crate is organised bottom-up:
//!
//! - [`neurons`]: LIF and diagonal-SSM recurrences, standard and Δ-parameterised.
//! - [`network`]: dense + batchnorm + neuron layers with a time-averaged readout.
//! - [`training`]: backpropagation through time, AdamW, local epochs.
//! - [`adaptation`]: rewriting dynamics for a different timestep.
//! - [`federation`]: broadcast, local training, aggregation.
//! - [`data`]: event streams, binning, coarsening, partitioning.
//! - [`energy`]: operation counts and their energy cost.
//! - [`experiment`]: config-driven runs and their output files.

pub mod adaptation;
pub mod data;
pub mod energy;
pub mod error;
pub mod experiment;
pub mod federation;
pub mod metrics;
pub mod network;
pub mod neurons;
pub mod seed;
pub mod training;

pub use error::{Error, Result};
pub use network::{Architecture, FrameSequence, ModelParams};
pub use neurons::{NeuronFamily, NeuronKind, Variant};
