pub mod baselines;
pub mod campaign;
pub mod cltrain;
pub mod config;
pub mod error;
pub mod features;
pub mod geom;
pub mod mobility;
pub mod policy;
pub mod qnet;
pub mod sim;

pub use error::{Error, Result};
