//! Sparse convolution engine and hierarchical encoder-decoder backbone for
//! voxelized point clouds.
//!
//! - [`sparse`]: sparse tensors, coordinate indices, rulebooks
//! - [`ops`]: submanifold, regular and inverse sparse convolutions, normalization
//! - [`dense`]: dense 2-d convolution and deconvolution
//! - [`blocks`]: residual blocks and the sparse/dense encoder-decoder blocks
//! - [`network`]: voxelization, bird's-eye-view compression and the full backbone

pub mod blocks;
pub mod dense;
pub mod digest;
mod error;
pub mod network;
pub mod ops;
pub mod params;
mod scalar;
pub mod sparse;

pub use error::{Error, Result};
pub use scalar::{cast_slice, Scalar};
