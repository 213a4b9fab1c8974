//! Normal-map federated learning for composite objectives `f + phi`.
//!
//! The crate contains the FedNMap client/server protocol, two baselines
//! (a prox-tracking method and SCAFFOLD), stationarity measures, a
//! deterministic round simulator and a verification harness.

pub mod algorithms;
pub mod config;
pub mod error;
pub mod maps;
pub mod plot;
pub mod problems;
pub mod regularizers;
pub mod rng;
pub mod simulator;
pub mod vector;
pub mod verify;

pub use error::{Error, Result};
pub use regularizers::{PhiValue, Regularizer, RegularizerKind};
pub use vector::ModelVector;
