pub mod accountant;
pub mod codebook;
pub mod data;
pub mod denoise;
pub mod error;
pub mod model;
pub mod noise;
pub mod quadrature;
pub mod trainer;

pub use error::{Error, Result};
