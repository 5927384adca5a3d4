//! Independent reference implementations used to check `hednet-core`:
//! nested-loop dense convolutions, a masked submanifold reference, central
//! finite differences, impulse-influence probes and seeded random instances.
//!
//! Nothing here calls the sparse operators; only the tensor and weight types
//! are shared.

mod conv;
mod fd;
mod influence;
mod random;

pub use conv::{dense_conv_reference, dense_conv_transpose_reference, submanifold_reference};
pub use fd::{finite_diff_grad, FdGrad};
pub use influence::{chebyshev_dilation, components, influence_set, InfluenceSet, ProbeError, INFLUENCE_DELTA, INFLUENCE_THRESHOLD};
pub use random::{random_coords, random_sparse_tensor, random_vec};
