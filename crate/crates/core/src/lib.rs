//! Sparse multi-source fusion network for joint classification of
//! hyperspectral and auxiliary (SAR or LiDAR) imagery.

pub mod attention;
pub mod autograd;
pub mod backbone;
pub mod bench;
pub mod data;
pub mod error;
pub mod fusion;
pub mod gradcheck;
pub mod kernels;
pub mod nn;
pub mod params;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Precision, Scalar, Tensor};
