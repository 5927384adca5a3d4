//! Sparse convolutions over rulebooks, normalization and activation, with
//! explicit backward passes.

mod conv;
mod norm;
mod weights;

pub use conv::{
    apply_rulebook, conv_backward, inv_conv_apply, inv_conv_forward, rs_conv_apply, rs_conv_forward, rs_conv_with_plan, ss_conv_forward,
    ss_conv_with_rulebook, ConvGrads, ConvSavedContext,
};
pub use norm::{
    norm_act, norm_relu_backward, norm_relu_forward, Activation, NormGrads, NormParams, NormSaved, DEFAULT_EPS,
};
pub use weights::ConvWeights;
