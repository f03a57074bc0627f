//! Deterministic federated-learning simulation: serial cyclic weight
//! transfer, cyclical weight consolidation and federated averaging over a
//! from-scratch MLP.

pub mod consolidation;
pub mod data;
pub mod error;
pub mod federation;
pub mod harness;
pub mod importance;
pub mod nn;
pub mod optim;
pub mod rng;

pub use error::{Error, FormatError, Result};
pub use nn::{Batch, DenseMatrix, MlpModel, ParamVector};
