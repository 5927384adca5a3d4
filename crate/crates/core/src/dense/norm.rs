use crate::dense::DenseTensor;
use crate::error::{shape_err, Result};
use crate::ops::{Activation, NormParams};
use crate::scalar::Scalar;

/// Per-channel normalization of a `(B, C, ...)` tensor followed by `act`.
/// Same arithmetic as [`crate::ops::norm_act`] on sparse rows.
pub fn dense_norm_act<T: Scalar>(x: &DenseTensor<T>, p: &NormParams<T>, act: Activation) -> Result<DenseTensor<T>> {
    if x.shape().len() < 2 || x.channels() != p.channels() {
        return Err(shape_err!("normalization of {} channels applied to shape {:?}", p.channels(), x.shape()));
    }
    let scale = p.scale();
    let (c, plane) = (x.channels(), x.plane());
    let mut out = x.clone();
    for (k, block) in out.data_mut().chunks_mut(plane).enumerate() {
        let ch = k % c;
        for v in block {
            *v = act.apply((*v - p.running_mean[ch]) * scale[ch] + p.beta[ch]);
        }
    }
    Ok(out)
}
