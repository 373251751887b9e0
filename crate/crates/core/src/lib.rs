//! Novel intent discovery over conversational data: featurization, masking
//! protocol, the three-headed Conv representation model, DAC/CDAC/LMCL
//! training, K-means, evaluation metrics and cluster post-processing.

pub mod cluster;
pub mod data;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod postprocess;
pub mod protocol;
pub mod report;
pub mod rng;
pub mod schemes;
pub mod synthetic;

pub use error::{Error, Result};
