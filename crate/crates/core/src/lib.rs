//! Deterministic federated-learning simulation.
//!
//! The crate is layered bottom-up:
//!
//! - [`nn`]: flat parameter vectors, a ReLU MLP with hand-written backprop,
//!   softmax / cross-entropy / MSE / KL losses and plain SGD.
//! - [`data`]: synthetic generators (Gaussian blobs, the labelled cube) and
//!   the non-IID partitioners (label quantity, label Dirichlet, quantity
//!   Dirichlet, feature noise, symmetric cube octants, data sources).
//! - [`fedalgos`]: server-side aggregation (FedAvg, FedProx, FedNova, FedLbl,
//!   FedDF ensemble distillation).
//! - [`decentralized`]: peer-to-peer rounds (Def-KT mutual transfer, FullAvg,
//!   Combo).
//! - [`simulator`]: client sampling, local training, round orchestration,
//!   evaluation and metrics.
//!
//! Every random decision draws from a stream derived from an explicit seed
//! (see [`rng`]), so a simulation is a pure function of its configuration.

pub mod data;
pub mod decentralized;
pub mod error;
pub mod fedalgos;
pub mod nn;
pub mod rng;
pub mod simulator;

pub use error::{FedError, Result};
