//! Dense 2-d machinery for the bird's-eye-view backbone.

mod conv;
mod norm;
mod tensor;

pub use conv::{
    dense_conv2d_backward, dense_conv2d_forward, dense_conv2d_forward_saved, dense_deconv2d_forward, DenseConvContext,
    DenseConvGrads,
};
pub use norm::dense_norm_act;
pub use tensor::DenseTensor;
