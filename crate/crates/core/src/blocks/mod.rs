//! Residual and encoder-decoder blocks built from the sparse and dense ops.

mod ded;
mod residual;
mod sed;

pub use ded::{ded_block_forward, DedBlockSpec, DedWeights};
pub(crate) use residual::{ssr_block_planned, SubmanifoldPlans};
pub use residual::{dr_block_forward, rsr_block_forward, ssr_block_forward, ResidualWeights};
pub use sed::{sed_block_forward, SedBlockSpec, SedWeights};
