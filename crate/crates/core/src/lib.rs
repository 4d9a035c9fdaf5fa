//! Scale-equivariant blind denoising toolkit.

pub mod audit;
pub mod autodiff;
pub mod error;
pub mod image_io;
pub mod metrics;
pub mod modules;
pub mod net;
pub mod noise;
pub mod optim;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{Real, Shape, Tensor};
