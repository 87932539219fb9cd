//! Desk-scale simulator for decentralized GAN training over gossiping user
//! devices, driving CSI-feedback autoencoder training with synthetic data.
//!
//! The crate is organized around the stages of that pipeline:
//!
//! - [`tensor`] — dense f64 tensors with tape-based reverse-mode autodiff
//!   (double backward capable, which the gradient penalty needs)
//! - [`nn`] — parameter vectors, layers, initialization and Adam
//! - [`channel`] — parametric mMIMO-OFDM channel synthesis and datasets
//! - [`dae`] — the CSI compression autoencoder and its training loop
//! - [`gan`] — generator/discriminator pair, losses, and adversarial training
//! - [`gossip`] — deterministic event-driven simulation of decentralized
//!   model exchange and merging, plus baselines
//! - [`pipeline`] — end-to-end experiment orchestration, sweeps, continual
//!   learning, and statistics
//! - [`io`] — dataset/checkpoint file formats, run configs, metrics CSV

pub mod channel;
pub mod dae;
pub mod gan;
pub mod gossip;
pub mod io;
pub mod nn;
pub mod pipeline;
pub mod seeds;
pub mod tensor;
