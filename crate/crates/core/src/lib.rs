//! Scale-invariant sharpness for batch-normalized networks.
//!
//! The crate measures how sharp a minimum is in a way that does not change
//! when the weights feeding a batch-normalized unit are rescaled, and trains
//! networks with that measure as a penalty. See the README for an overview.

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod manifold;
pub mod net;
pub mod optimizer;
pub mod params;
pub mod quadrature;
pub mod regularizer;
pub mod sharpness;

pub use error::{Error, Result};
pub use manifold::Direction;
pub use net::{Batch, LossOracle};
pub use params::ParamVector;
