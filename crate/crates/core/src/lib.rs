// `!(x > 0.0)` is how validation rejects NaN along with out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod config;
pub mod data;
pub mod digest;
pub mod error;
pub mod experiment;
pub mod fed;
pub mod model;
pub mod nn;
pub mod privacy;
pub mod rng;

pub use data::{Domain, ItemRef};
pub use error::{Error, Result};
pub use model::{ModelConfig, ModelParams};
pub use nn::Matrix;
