//! Sparse tensors over integer grids and the rulebooks that drive sparse
//! convolutions.

mod coord;
mod kernel;
mod rulebook;
mod tensor;

pub use coord::{build_coord_index, Coord, CoordIndex, MAX_SPATIAL};
pub use kernel::KernelSpec;
pub use rulebook::{
    build_downsample_rulebook, build_submanifold_rulebook, transpose_rulebook, Downsample, GatherIndex, RulePair,
    Rulebook,
};
pub use tensor::SparseTensor;

use crate::dense::DenseTensor;
use crate::error::Result;
use crate::scalar::Scalar;

/// Fraction of grid cells without an active coordinate.
pub fn sparsity<T: Scalar>(t: &SparseTensor<T>) -> f64 {
    t.sparsity()
}

pub fn sparse_to_dense<T: Scalar>(t: &SparseTensor<T>) -> DenseTensor<T> {
    t.to_dense()
}

/// Gathers every cell with at least one nonzero channel.
pub fn dense_to_sparse<T: Scalar>(d: &DenseTensor<T>) -> Result<SparseTensor<T>> {
    SparseTensor::from_dense(d)
}
