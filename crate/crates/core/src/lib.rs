pub mod autodiff;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod gradcheck;
pub mod image;
pub mod metrics;
pub mod modelfile;
pub mod morphology;
pub mod optim;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod transform;
pub mod unet;

pub use error::{Result, SegError};
pub use tensor::{DType, Real, Shape, Tensor};
