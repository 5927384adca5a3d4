use serde::{Deserialize, Serialize};

use crate::blocks::residual::{dr_block_forward, ResidualWeights};
use crate::dense::{dense_deconv2d_forward, dense_norm_act, DenseTensor};
use crate::error::{shape_err, Error, Result};
use crate::ops::Activation;
use crate::params::{ConvNorm, ParamSource};
use crate::scalar::Scalar;
use crate::sparse::KernelSpec;

/// Shape of a dense encoder-decoder block over `(B, C, H, W)` maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DedBlockSpec {
    pub scales: usize,
    pub m: usize,
    pub channels: usize,
}

impl DedBlockSpec {
    pub fn validate(&self) -> Result<()> {
        if self.scales == 0 || self.m == 0 || self.channels == 0 {
            return Err(Error::Config(format!(
                "DED block needs scales, m and channels >= 1 (got {}, {}, {})",
                self.scales, self.m, self.channels
            )));
        }
        Ok(())
    }

    fn up_kernel(&self) -> KernelSpec {
        KernelSpec::uniform(2, 2, 2, 0, self.channels, self.channels)
    }
}

/// Parameters of one DED block. `downs[j]` is the stride-2 DR block from
/// resolution `j` to `j + 1`; `ups[j]` the 2x2 deconvolution back.
#[derive(Debug, Clone, PartialEq)]
pub struct DedWeights<T> {
    pub scales: Vec<Vec<ResidualWeights<T>>>,
    pub downs: Vec<ResidualWeights<T>>,
    pub ups: Vec<ConvNorm<T>>,
}

impl<T: Scalar> DedWeights<T> {
    pub fn build(spec: &DedBlockSpec, src: &mut dyn ParamSource, name: &str) -> Result<Self> {
        spec.validate()?;
        let c = spec.channels;
        let mut scales = Vec::with_capacity(spec.scales);
        for j in 0..spec.scales {
            let blocks = (0..spec.m)
                .map(|k| ResidualWeights::build_dense(src, &format!("{name}.scale{j}.dr{k}"), c, 1))
                .collect::<Result<Vec<_>>>()?;
            scales.push(blocks);
        }
        let mut downs = Vec::new();
        let mut ups = Vec::new();
        for j in 0..spec.scales - 1 {
            downs.push(ResidualWeights::build_dense(src, &format!("{name}.down{j}"), c, 2)?);
            ups.push(ConvNorm::build(src, &format!("{name}.up{j}"), &[2, 2], c, c)?);
        }
        Ok(Self { scales, downs, ups })
    }

    pub fn cast<U: Scalar>(&self) -> DedWeights<U> {
        DedWeights {
            scales: self.scales.iter().map(|s| s.iter().map(|b| b.cast()).collect()).collect(),
            downs: self.downs.iter().map(|d| d.cast()).collect(),
            ups: self.ups.iter().map(|u| u.cast()).collect(),
        }
    }
}

fn dr_stack<T: Scalar>(x: &DenseTensor<T>, blocks: &[ResidualWeights<T>], act: Activation) -> Result<DenseTensor<T>> {
    let mut x = x.clone();
    for w in blocks {
        x = dr_block_forward(&x, 1, w, act)?;
    }
    Ok(x)
}

/// Dense encoder-decoder block. Spatial dims must be divisible by
/// `2^(scales - 1)`; the output has the input's shape.
pub fn ded_block_forward<T: Scalar>(
    x: &DenseTensor<T>,
    spec: &DedBlockSpec,
    w: &DedWeights<T>,
    act: Activation,
) -> Result<DenseTensor<T>> {
    spec.validate()?;
    let ok = w.scales.len() == spec.scales
        && w.scales.iter().all(|s| s.len() == spec.m)
        && w.downs.len() + 1 == spec.scales
        && w.ups.len() + 1 == spec.scales;
    if !ok {
        return Err(shape_err!("DED weights do not match a {}-scale block with m = {}", spec.scales, spec.m));
    }
    if x.shape().len() != 4 || x.channels() != spec.channels {
        return Err(shape_err!("DED block expects (B, {}, H, W), got {:?}", spec.channels, x.shape()));
    }
    let factor = 1usize << (spec.scales - 1);
    if x.spatial().iter().any(|&n| n % factor != 0) {
        return Err(shape_err!("DED block with {} scales needs spatial dims divisible by {factor}, got {:?}", spec.scales, x.spatial()));
    }
    let up_kernel = spec.up_kernel();
    let mut skips = Vec::with_capacity(spec.scales);
    let mut h = dr_stack(x, &w.scales[0], act)?;
    for j in 0..spec.scales - 1 {
        let down = dr_block_forward(&h, 2, &w.downs[j], act)?;
        skips.push(h);
        h = dr_stack(&down, &w.scales[j + 1], act)?;
    }
    for j in (0..spec.scales - 1).rev() {
        let up = &w.ups[j];
        let u = dense_deconv2d_forward(&h, &up_kernel, &up.conv)?;
        let u = dense_norm_act(&u, &up.norm, act)?;
        h = u.add(&skips.pop().expect("one skip per descent"))?;
    }
    Ok(h)
}
