pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod cost;
pub mod data;
pub mod error;
pub mod gradient_suite;
pub mod infer;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod pipeline;
pub mod quality;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
