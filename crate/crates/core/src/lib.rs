//! Dual-modal (RGB + elevation) terrace segmentation and vectorization on
//! synthetic tiles: a small reverse-mode autodiff engine, the Ω-net encoder
//! built from windowed-attention blocks, soft-region refinement, and a
//! contour vibration model that turns masks into polygons.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix `f64`, which training and the CLI use.

pub mod checkpoint;
pub mod dataforge;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod model;
pub mod nn;
pub mod omega;
pub mod optim;
pub mod scalar;
pub mod srtcm;
pub mod stsro;
pub mod tensor;
pub mod trainer;
pub mod vem;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = tensor::Tensor<f64>;
pub type TerraceNet64 = model::TerraceNet<f64>;
pub type Contour64 = vem::Contour<f64>;
pub type VibrationField64 = vem::VibrationField<f64>;
